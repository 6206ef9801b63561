//! Timestamped event log of a simulation run and its CSV form.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{AccessKind, ChunkId, RequestId};

pub const TRACE_SCHEMA: &str = "#schema=regen-quorum-trace/1";
pub const TRACE_COLUMNS: &str = "time,event,request,kind,node,chunk,detail";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Meta,
    Arrive,
    Vote,
    Refuse,
    Lock,
    Discard,
    Wait,
    Withdraw,
    Promote,
    Quorum,
    Release,
    Complete,
    Demote,
    Deadlock,
    Wdt,
    Record,
    Stale,
    End,
}

impl TraceEvent {
    pub const ALL: [TraceEvent; 18] = [
        TraceEvent::Meta,
        TraceEvent::Arrive,
        TraceEvent::Vote,
        TraceEvent::Refuse,
        TraceEvent::Lock,
        TraceEvent::Discard,
        TraceEvent::Wait,
        TraceEvent::Withdraw,
        TraceEvent::Promote,
        TraceEvent::Quorum,
        TraceEvent::Release,
        TraceEvent::Complete,
        TraceEvent::Demote,
        TraceEvent::Deadlock,
        TraceEvent::Wdt,
        TraceEvent::Record,
        TraceEvent::Stale,
        TraceEvent::End,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEvent::Meta => "meta",
            TraceEvent::Arrive => "arrive",
            TraceEvent::Vote => "vote",
            TraceEvent::Refuse => "refuse",
            TraceEvent::Lock => "lock",
            TraceEvent::Discard => "discard",
            TraceEvent::Wait => "wait",
            TraceEvent::Withdraw => "withdraw",
            TraceEvent::Promote => "promote",
            TraceEvent::Quorum => "quorum",
            TraceEvent::Release => "release",
            TraceEvent::Complete => "complete",
            TraceEvent::Demote => "demote",
            TraceEvent::Deadlock => "deadlock",
            TraceEvent::Wdt => "wdt",
            TraceEvent::Record => "record",
            TraceEvent::Stale => "stale",
            TraceEvent::End => "end",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceEvent::ALL
            .iter()
            .copied()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown trace event `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub event: TraceEvent,
    pub request: Option<RequestId>,
    pub kind: Option<AccessKind>,
    pub node: Option<usize>,
    pub chunk: Option<usize>,
    pub detail: String,
}

impl TraceRecord {
    pub fn new(time: f64, event: TraceEvent) -> Self {
        Self {
            time,
            event,
            request: None,
            kind: None,
            node: None,
            chunk: None,
            detail: String::new(),
        }
    }

    pub fn request(mut self, id: RequestId, kind: AccessKind) -> Self {
        self.request = Some(id);
        self.kind = Some(kind);
        self
    }

    pub fn at(mut self, chunk: ChunkId) -> Self {
        self.node = Some(chunk.node);
        self.chunk = Some(chunk.slot);
        self
    }

    pub fn node(mut self, node: usize) -> Self {
        self.node = Some(node);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn chunk_id(&self) -> Option<ChunkId> {
        Some(ChunkId::new(self.node?, self.chunk?))
    }

    /// Value of `key` in a `key=value;key=value` detail string.
    pub fn field(&self, key: &str) -> Option<&str> {
        detail_field(&self.detail, key)
    }
}

pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split(';').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k == key).then_some(v)
    })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<(), TraceError> {
    writeln!(out, "{TRACE_SCHEMA}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS.split(','))?;
    for r in records {
        w.write_record([
            r.time.to_string(),
            r.event.to_string(),
            opt(&r.request),
            opt(&r.kind),
            opt(&r.node),
            opt(&r.chunk),
            r.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(mut input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != TRACE_SCHEMA {
        return Err(TraceError::Format {
            line: 1,
            msg: format!("expected `{TRACE_SCHEMA}`"),
        });
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TRACE_COLUMNS {
        return Err(TraceError::Format {
            line: 2,
            msg: format!("expected columns `{TRACE_COLUMNS}`"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 3;
        let bad = |msg: String| TraceError::Format { line, msg };
        if row.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", row.len())));
        }
        let num = |s: &str| -> Result<Option<usize>, TraceError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad integer `{s}`")))
            }
        };
        let time: f64 = row[0].parse().map_err(|_| bad(format!("bad time `{}`", &row[0])))?;
        let event = row[1].parse().map_err(bad)?;
        let request = num(&row[2])?.map(|v| RequestId(v as u64));
        let kind = if row[3].is_empty() {
            None
        } else {
            Some(row[3].parse().map_err(bad)?)
        };
        out.push(TraceRecord {
            time,
            event,
            request,
            kind,
            node: num(&row[4])?,
            chunk: num(&row[5])?,
            detail: row[6].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let recs = vec![
            TraceRecord::new(0.0, TraceEvent::Meta).detail("nodes=5;k=2"),
            TraceRecord::new(0.1 + 0.2, TraceEvent::Lock)
                .request(RequestId(3), AccessKind::Write)
                .at(ChunkId::new(2, 1))
                .detail("v1l0->v0l2"),
            TraceRecord::new(1e-9, TraceEvent::Wdt).detail("2 2 2 4 6"),
            TraceRecord::new(2.5, TraceEvent::Deadlock).detail("round=1;ratios=3:5/6,4:1/2"),
        ];
        let mut buf = Vec::new();
        write_trace(&recs, &mut buf).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn rejects_missing_schema() {
        assert!(read_trace("time,event\n".as_bytes()).is_err());
    }

    #[test]
    fn detail_fields() {
        let r = TraceRecord::new(0.0, TraceEvent::Arrive).detail("slot=2;prio=-1;native=0");
        assert_eq!(r.field("prio"), Some("-1"));
        assert_eq!(r.field("missing"), None);
    }

    #[test]
    fn event_names_round_trip() {
        for e in TraceEvent::ALL {
            assert_eq!(e.as_str().parse::<TraceEvent>().unwrap(), e);
        }
    }
}
