use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::ids::AccessKind;
use crate::trace::{TraceError, TraceEvent, TraceRecord};

pub const METRICS_SCHEMA: &str = "#schema=regen-quorum-metrics/1";

const KINDS: [AccessKind; 3] = [AccessKind::Read, AccessKind::Write, AccessKind::Repair];

fn kind_index(kind: AccessKind) -> usize {
    match kind {
        AccessKind::Read => 0,
        AccessKind::Write => 1,
        AccessKind::Repair => 2,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub horizon: f64,
    pub events: u64,
    pub arrivals: [u64; 3],
    pub completions: [u64; 3],
    pub latency_sum: [f64; 3],
    pub latency_max: [f64; 3],
    /// Time spent with `n` requests in the system, up to the horizon.
    pub in_system_time: BTreeMap<usize, f64>,
    pub deadlock_rounds: u64,
    pub demotions: u64,
    pub stale_votes: u64,
}

impl Metrics {
    pub fn arrivals_of(&self, kind: AccessKind) -> u64 {
        self.arrivals[kind_index(kind)]
    }

    pub fn completions_of(&self, kind: AccessKind) -> u64 {
        self.completions[kind_index(kind)]
    }

    pub fn mean_latency(&self, kind: AccessKind) -> f64 {
        let i = kind_index(kind);
        if self.completions[i] == 0 {
            0.0
        } else {
            self.latency_sum[i] / self.completions[i] as f64
        }
    }

    /// Time-weighted distribution of the in-system count, indexed by count.
    pub fn in_system_pmf(&self) -> Vec<f64> {
        let total: f64 = self.in_system_time.values().sum();
        let len = self.in_system_time.keys().next_back().map_or(0, |&n| n + 1);
        let mut out = vec![0.0; len];
        if total > 0.0 {
            for (&n, &t) in &self.in_system_time {
                out[n] = t / total;
            }
        }
        out
    }

    /// Named statistics in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("horizon".to_string(), self.horizon),
            ("events".to_string(), self.events as f64),
        ];
        for k in KINDS {
            let i = kind_index(k);
            rows.push((format!("arrivals_{k}"), self.arrivals[i] as f64));
            rows.push((format!("completions_{k}"), self.completions[i] as f64));
            rows.push((format!("latency_mean_{k}"), self.mean_latency(k)));
            rows.push((format!("latency_max_{k}"), self.latency_max[i]));
        }
        rows.push(("deadlock_rounds".into(), self.deadlock_rounds as f64));
        rows.push(("demotions".into(), self.demotions as f64));
        rows.push(("stale_votes".into(), self.stale_votes as f64));
        let pmf = self.in_system_pmf();
        let mean: f64 = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        rows.push(("in_system_mean".into(), mean));
        for (n, p) in pmf.iter().enumerate() {
            rows.push((format!("in_system_p{n}"), *p));
        }
        rows
    }
}

/// Folds trace rows into [`Metrics`] one at a time.
#[derive(Debug, Clone, Default)]
pub struct MetricsBuilder {
    m: Metrics,
    in_system: usize,
    last: f64,
}

impl MetricsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn advance(&mut self, t: f64) {
        let until = t.min(self.m.horizon);
        if until > self.last {
            *self.m.in_system_time.entry(self.in_system).or_insert(0.0) += until - self.last;
            self.last = until;
        }
    }

    pub fn push(&mut self, r: &TraceRecord) {
        match r.event {
            TraceEvent::Meta => {
                if let Some(h) = r.field("horizon").and_then(|v| v.parse().ok()) {
                    self.m.horizon = h;
                }
            }
            TraceEvent::Arrive => {
                self.advance(r.time);
                self.in_system += 1;
                if let Some(k) = r.kind {
                    self.m.arrivals[kind_index(k)] += 1;
                }
            }
            TraceEvent::Complete => {
                self.advance(r.time);
                self.in_system = self.in_system.saturating_sub(1);
                if let Some(k) = r.kind {
                    let i = kind_index(k);
                    self.m.completions[i] += 1;
                    if let Some(l) = r.field("latency").and_then(|v| v.parse::<f64>().ok()) {
                        self.m.latency_sum[i] += l;
                        self.m.latency_max[i] = self.m.latency_max[i].max(l);
                    }
                }
            }
            TraceEvent::Deadlock => self.m.deadlock_rounds += 1,
            TraceEvent::Demote => self.m.demotions += 1,
            TraceEvent::Stale => self.m.stale_votes += 1,
            TraceEvent::End => {
                if let Some(e) = r.field("events").and_then(|v| v.parse().ok()) {
                    self.m.events = e;
                }
            }
            _ => {}
        }
    }

    pub fn finish(mut self) -> Metrics {
        let h = self.m.horizon;
        self.advance(h);
        self.m
    }
}

pub fn record_metrics(trace: &[TraceRecord]) -> Metrics {
    let mut b = MetricsBuilder::new();
    for r in trace {
        b.push(r);
    }
    b.finish()
}

pub fn write_metrics<W: Write>(m: &Metrics, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_SCHEMA}")?;
    writeln!(out, "statistic,value")?;
    for (name, v) in m.rows() {
        writeln!(out, "{name},{v}")?;
    }
    Ok(())
}

pub fn read_metrics<R: BufRead>(input: R) -> Result<Vec<(String, f64)>, TraceError> {
    let mut lines = input.lines();
    let bad = |line, msg: &str| TraceError::Format {
        line,
        msg: msg.to_string(),
    };
    if lines.next().transpose()?.as_deref() != Some(METRICS_SCHEMA) {
        return Err(bad(1, "missing metrics schema header"));
    }
    if lines.next().transpose()?.as_deref() != Some("statistic,value") {
        return Err(bad(2, "missing column header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let (k, v) = line.split_once(',').ok_or_else(|| bad(i + 3, "expected two fields"))?;
        let v = v.parse().map_err(|_| bad(i + 3, "bad value"))?;
        out.push((k.to_string(), v));
    }
    Ok(out)
}
