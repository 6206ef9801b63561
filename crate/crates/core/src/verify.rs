//! Independent replay of a trace that re-asserts the protocol invariants.
//!
//! The checker keeps its own model of every chunk's vote and lock state
//! built only from trace rows, so it does not share state with the
//! coordinator that produced the trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ids::{AccessKind, ChunkId, RequestId};
use crate::routing::{Topology, WriteDistanceTable};
use crate::trace::{detail_field, TraceEvent, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Zero-based row index in the trace.
    pub row: usize,
    pub time: f64,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {} t={}: {}", self.row, self.time, self.msg)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub rows: usize,
    pub requests: usize,
    pub grants: usize,
    pub quorums: usize,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct ChunkModel {
    votes: BTreeSet<RequestId>,
    writer: Option<RequestId>,
    readers: BTreeSet<RequestId>,
}

impl ChunkModel {
    fn bits(&self) -> String {
        let lock = if self.writer.is_some() {
            2
        } else if !self.readers.is_empty() {
            1
        } else {
            0
        };
        // the vote bit is clear only under a write lock
        format!("v{}l{}", u8::from(self.writer.is_none()), lock)
    }
}

#[derive(Debug, Clone)]
struct ReqModel {
    kind: AccessKind,
    native: Option<usize>,
    target: Option<usize>,
    votes: BTreeSet<ChunkId>,
    held: BTreeSet<ChunkId>,
    waits: BTreeSet<ChunkId>,
    running: bool,
}

#[derive(Debug, Default)]
struct Meta {
    nodes: usize,
    k: usize,
    d: usize,
    alpha: usize,
    beta: usize,
    edges: Option<Vec<(usize, usize)>>,
    footprints: BTreeMap<usize, BTreeSet<ChunkId>>,
}

struct Checker {
    meta: Meta,
    topology: Option<Topology>,
    chunks: BTreeMap<ChunkId, ChunkModel>,
    requests: BTreeMap<RequestId, ReqModel>,
    seen: BTreeSet<RequestId>,
    wdt: Option<Vec<u64>>,
    last_time: f64,
    report: VerifyReport,
    row: usize,
    time: f64,
}

fn parse_num<T: std::str::FromStr>(detail: &str, key: &str) -> Option<T> {
    detail_field(detail, key).and_then(|v| v.parse().ok())
}

fn parse_chunk(s: &str) -> Option<ChunkId> {
    let (n, c) = s.split_once(':')?;
    Some(ChunkId::new(n.parse().ok()?, c.parse().ok()?))
}

fn parse_edge(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once('-')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

impl Checker {
    fn fail(&mut self, msg: impl Into<String>) {
        self.report.violations.push(Violation {
            row: self.row,
            time: self.time,
            msg: msg.into(),
        });
    }

    fn meta(&mut self, detail: &str) {
        if let Some(n) = parse_num(detail, "nodes") {
            self.meta.nodes = n;
            self.meta.k = parse_num(detail, "k").unwrap_or(0);
            self.meta.d = parse_num(detail, "d").unwrap_or(0);
            self.meta.alpha = parse_num(detail, "alpha").unwrap_or(0);
            self.meta.beta = parse_num(detail, "beta").unwrap_or(0);
        } else if let Some(e) = detail_field(detail, "edges") {
            let edges: Option<Vec<_>> = e.split_whitespace().map(parse_edge).collect();
            match edges {
                Some(edges) => {
                    match Topology::from_edges(self.meta.nodes, &edges) {
                        Ok(t) => self.topology = Some(t),
                        Err(err) => self.fail(format!("bad topology: {err}")),
                    }
                    self.meta.edges = Some(edges);
                }
                None => self.fail("unparseable edge list"),
            }
        } else if let Some(u) = parse_num::<usize>(detail, "native") {
            let chunks: Option<BTreeSet<_>> = detail_field(detail, "chunks")
                .unwrap_or("")
                .split_whitespace()
                .map(parse_chunk)
                .collect();
            match chunks {
                Some(c) => {
                    self.meta.footprints.insert(u, c);
                }
                None => self.fail("unparseable footprint row"),
            }
        }
    }

    fn expect_request(&mut self, r: &TraceRecord) -> Option<RequestId> {
        let id = r.request;
        if id.is_none() {
            self.fail(format!("{} row without a request", r.event));
        }
        id
    }

    fn check_bits(&mut self, r: &TraceRecord, before: &str, c: ChunkId) {
        let Some((old, new)) = r.detail.split_once("->") else {
            self.fail(format!("{} row without a bit change", r.event));
            return;
        };
        let after = self.chunks.get(&c).map(ChunkModel::bits).unwrap_or_else(|| "v0l0".into());
        if old != before || new != after {
            self.fail(format!("bits at {c} logged {old}->{new}, replay gives {before}->{after}"));
        }
    }

    fn lock(&mut self, r: &TraceRecord, id: RequestId, c: ChunkId) {
        let Some(kind) = self.requests.get(&id).map(|q| q.kind) else {
            self.fail(format!("lock by unknown request {id}"));
            return;
        };
        let before = self.chunk(c).bits();
        let ch = self.chunk(c);
        let vote_ok = ch.votes.remove(&id);
        let conflict = match kind {
            AccessKind::Write => ch.writer.is_some() || !ch.readers.is_empty(),
            _ => ch.writer.is_some(),
        };
        match kind {
            AccessKind::Write => ch.writer = Some(id),
            _ => {
                ch.readers.insert(id);
            }
        }
        if !vote_ok {
            self.fail(format!("{id} locked {c} without holding its vote"));
        }
        if conflict {
            self.fail(format!("mutual exclusion broken at {c} by {kind} {id}"));
        }
        if let Some(q) = self.requests.get_mut(&id) {
            q.votes.remove(&c);
            q.held.insert(c);
            if q.running {
                self.fail(format!("{id} took a lock after reaching quorum"));
            }
        }
        self.report.grants += 1;
        self.check_bits(r, &before, c);
    }

    fn release(&mut self, r: &TraceRecord, id: RequestId, c: ChunkId) {
        let before = self.chunk(c).bits();
        let ch = self.chunk(c);
        let had = if ch.writer == Some(id) {
            ch.writer = None;
            true
        } else {
            ch.readers.remove(&id)
        };
        if !had {
            self.fail(format!("{id} released {c} without holding it"));
        }
        if let Some(q) = self.requests.get_mut(&id) {
            q.held.remove(&c);
        }
        self.check_bits(r, &before, c);
    }

    fn chunk(&mut self, c: ChunkId) -> &mut ChunkModel {
        self.chunks.entry(c).or_default()
    }

    fn quorum(&mut self, id: RequestId) {
        let Some(q) = self.requests.get(&id).cloned() else {
            self.fail(format!("quorum for unknown request {id}"));
            return;
        };
        self.report.quorums += 1;
        let nodes: BTreeSet<usize> = q.held.iter().map(|c| c.node).collect();
        let per_node = |n: usize| q.held.iter().filter(|c| c.node == n).count();
        let m = &self.meta;
        let ok = match q.kind {
            AccessKind::Read => nodes.len() == m.k && q.held.len() == m.k * m.alpha && nodes.iter().all(|&n| per_node(n) == m.alpha),
            AccessKind::Write => q.native.and_then(|u| m.footprints.get(&u)) == Some(&q.held),
            AccessKind::Repair => {
                nodes.len() == m.d
                    && q.held.len() == m.d * m.beta
                    && nodes.iter().all(|&n| per_node(n) == m.beta)
                    && q.target.is_some_and(|t| !nodes.contains(&t))
            }
        };
        if !ok {
            let held: Vec<String> = q.held.iter().map(ToString::to_string).collect();
            self.fail(format!("{} {id} reached quorum holding [{}]", q.kind, held.join(" ")));
        }
        if !q.votes.is_empty() {
            self.fail(format!("{id} reached quorum with votes still outstanding"));
        }
        if q.kind.is_shared() {
            // a shared quorum may not mix the finished and waiting parts of a pending write
            for (wid, w) in &self.requests {
                if *wid == id || w.kind != AccessKind::Write || w.held.is_empty() || w.waits.is_empty() {
                    continue;
                }
                if !q.held.is_disjoint(&w.held) && !q.held.is_disjoint(&w.waits) {
                    let msg = format!("{id} spans both parts of pending write {wid}");
                    self.fail(msg);
                    break;
                }
            }
        }
        if let Some(q) = self.requests.get_mut(&id) {
            q.running = true;
        }
    }

    fn check_wdt(&mut self) {
        let (Some(topo), Some(logged)) = (&self.topology, &self.wdt) else {
            return;
        };
        let writers: BTreeSet<usize> = self
            .chunks
            .iter()
            .filter(|(_, m)| m.writer.is_some())
            .map(|(c, _)| c.node)
            .collect();
        let fresh = WriteDistanceTable::compute(topo, writers);
        if fresh.values() != logged.as_slice() {
            self.fail("write distance table is stale");
        }
    }

    fn step(&mut self, r: &TraceRecord) {
        if r.time.is_nan() || r.time < self.last_time {
            self.fail(format!("time went backwards to {}", r.time));
        }
        self.last_time = self.last_time.max(r.time);
        let chunk = r.chunk_id();
        match r.event {
            TraceEvent::Meta => self.meta(&r.detail.clone()),
            TraceEvent::Arrive => {
                let Some(id) = self.expect_request(r) else { return };
                if !self.seen.insert(id) {
                    self.fail(format!("{id} arrived twice"));
                }
                let Some(kind) = r.kind else {
                    self.fail("arrival without a kind");
                    return;
                };
                self.requests.insert(
                    id,
                    ReqModel {
                        kind,
                        native: parse_num(&r.detail, "native"),
                        target: r.node,
                        votes: BTreeSet::new(),
                        held: BTreeSet::new(),
                        waits: BTreeSet::new(),
                        running: false,
                    },
                );
                self.report.requests += 1;
            }
            TraceEvent::Vote => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                let kind = self.requests.get(&id).map(|q| q.kind);
                let ch = self.chunk(c);
                let duplicate = !ch.votes.insert(id) || ch.writer == Some(id) || ch.readers.contains(&id);
                let compatible = match kind {
                    Some(AccessKind::Write) => ch.writer.is_none() && ch.readers.is_empty(),
                    _ => ch.writer.is_none(),
                };
                if duplicate {
                    self.fail(format!("{c} voted twice for {id}"));
                }
                if !compatible {
                    self.fail(format!("{c} voted for {id} under an incompatible lock"));
                }
                match self.requests.get_mut(&id) {
                    Some(q) => {
                        q.votes.insert(c);
                    }
                    None => self.fail(format!("vote for unknown request {id}")),
                }
            }
            TraceEvent::Discard => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                let ch = self.chunk(c);
                if !ch.votes.remove(&id) {
                    self.fail(format!("{id} discarded a vote at {c} it did not hold"));
                }
                if let Some(q) = self.requests.get_mut(&id) {
                    q.votes.remove(&c);
                }
            }
            TraceEvent::Lock => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                self.lock(r, id, c);
            }
            TraceEvent::Release => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                self.release(r, id, c);
            }
            TraceEvent::Wait => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                if let Some(q) = self.requests.get_mut(&id) {
                    q.waits.insert(c);
                }
            }
            TraceEvent::Withdraw | TraceEvent::Promote => {
                let (Some(id), Some(c)) = (self.expect_request(r), chunk) else { return };
                let removed = self.requests.get_mut(&id).is_some_and(|q| q.waits.remove(&c));
                if !removed {
                    self.fail(format!("{id} left the queue at {c} without being in it"));
                }
            }
            TraceEvent::Quorum => {
                let Some(id) = self.expect_request(r) else { return };
                self.quorum(id);
            }
            TraceEvent::Demote => {
                let Some(id) = self.expect_request(r) else { return };
                if self.requests.get(&id).is_none_or(|q| q.running) {
                    self.fail(format!("{id} demoted while not waiting"));
                }
            }
            TraceEvent::Complete => {
                let Some(id) = self.expect_request(r) else { return };
                match self.requests.remove(&id) {
                    Some(q) if q.running && q.held.is_empty() && q.votes.is_empty() && q.waits.is_empty() => {}
                    Some(_) => self.fail(format!("{id} completed without a clean quorum lifecycle")),
                    None => self.fail(format!("{id} completed without being in the system")),
                }
            }
            TraceEvent::Wdt => {
                let values: Option<Vec<u64>> = r.detail.split_whitespace().map(|v| v.parse().ok()).collect();
                match values {
                    Some(v) => self.wdt = Some(v),
                    None => self.fail("unparseable write distance row"),
                }
            }
            TraceEvent::End => {
                if let Some(id) = self.requests.keys().next().copied() {
                    self.fail(format!("{id} never completed"));
                }
                let stuck = self.chunks.iter().find(|(_, m)| !m.votes.is_empty() || m.writer.is_some() || !m.readers.is_empty());
                if let Some((c, _)) = stuck {
                    let msg = format!("{c} still holds state at the end");
                    self.fail(msg);
                }
            }
            TraceEvent::Refuse | TraceEvent::Deadlock | TraceEvent::Record | TraceEvent::Stale => {}
        }
        if !matches!(r.event, TraceEvent::Lock | TraceEvent::Release | TraceEvent::Wdt | TraceEvent::Meta) {
            self.check_wdt();
        }
    }
}

/// Replays `trace` and reports every invariant it breaks.
pub fn verify_trace(trace: &[TraceRecord]) -> VerifyReport {
    let mut c = Checker {
        meta: Meta::default(),
        topology: None,
        chunks: BTreeMap::new(),
        requests: BTreeMap::new(),
        seen: BTreeSet::new(),
        wdt: None,
        last_time: f64::NEG_INFINITY,
        report: VerifyReport::default(),
        row: 0,
        time: 0.0,
    };
    for (i, r) in trace.iter().enumerate() {
        c.row = i;
        c.time = r.time;
        c.step(r);
    }
    if trace.last().is_none_or(|r| r.event != TraceEvent::End) {
        c.row = trace.len();
        c.fail("trace has no end row");
    }
    if c.meta.edges.is_none() {
        c.fail("trace has no topology row");
    }
    c.report.rows = trace.len();
    c.report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, SimConfig};

    fn mm1_trace() -> Vec<TraceRecord> {
        let mut cfg = SimConfig::mm1(5.0, 10.0, 20.0, 4);
        cfg.keep_trace = true;
        run(&cfg).unwrap().trace
    }

    #[test]
    fn clean_trace_passes() {
        let t = mm1_trace();
        let rep = verify_trace(&t);
        assert!(rep.ok(), "{:?}", rep.violations.first());
        assert!(rep.quorums > 50);
        assert_eq!(rep.grants, rep.quorums);
    }

    #[test]
    fn dropped_release_is_caught() {
        let mut t = mm1_trace();
        let i = t.iter().position(|r| r.event == TraceEvent::Release).unwrap();
        t.remove(i);
        assert!(!verify_trace(&t).ok());
    }

    #[test]
    fn double_write_lock_is_caught() {
        let mut t = mm1_trace();
        // move a release behind the next lock so two writers overlap
        let rel = t.iter().position(|r| r.event == TraceEvent::Release).unwrap();
        let next_lock = rel + t[rel..].iter().position(|r| r.event == TraceEvent::Lock).unwrap();
        let row = t.remove(rel);
        t.insert(next_lock, row);
        let rep = verify_trace(&t);
        assert!(rep.violations.iter().any(|v| v.msg.contains("mutual exclusion")), "{:?}", rep.violations);
    }

    #[test]
    fn shuffled_time_is_caught() {
        let mut t = mm1_trace();
        let n = t.len();
        t.swap(n / 2, n - 2);
        assert!(!verify_trace(&t).ok());
    }

    #[test]
    fn truncated_trace_is_caught() {
        let mut t = mm1_trace();
        t.truncate(t.len() / 2);
        assert!(!verify_trace(&t).ok());
    }
}
