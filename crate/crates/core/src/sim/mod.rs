//! Deterministic discrete-event simulation of the protocol under Poisson
//! arrivals and exponential service.
//!
//! Events are processed in `(time, kind rank, priority desc, arrival, id,
//! insertion order)` order, so a run is a pure function of its
//! configuration and seed. Each source of randomness draws from its own
//! ChaCha stream.

mod backlog;
mod metrics;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backlog::{backlog_experiment, figure5_table, BacklogResult, Figure5Table, FIGURE5_SCHEMA};
pub use metrics::{read_metrics, record_metrics, write_metrics, Metrics, MetricsBuilder, METRICS_SCHEMA};

use crate::code_model::{validate_params, CodeParams, FootprintMatrix};
use crate::coordinator::{Coordinator, CoordinatorError, Effect};
use crate::ids::{AccessKind, ChunkId, RequestId};
use crate::placement::place_code;
use crate::routing::{Topology, TopologySpec};
pub use crate::scheduler::SlotPolicy;
use crate::scheduler::{request_vote_ratio, select_victims, DeadlockConfig, Scheduler, SchedulerError};
use crate::trace::{TraceEvent, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("invariant violated at t={time}: {msg}")]
    Invariant { time: f64, msg: String },
    #[error("event limit of {0} reached before the run drained")]
    EventLimit(u64),
}

/// Exponential sample by inversion of the CDF.
pub fn sample_interarrival<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, SimError> {
    if !(rate > 0.0) {
        return Err(SimError::NonPositiveRate(rate));
    }
    let u: f64 = rng.random();
    Ok(-(1.0 - u).ln() / rate)
}

/// A request injected at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRequest {
    pub time: f64,
    pub kind: AccessKind,
    #[serde(default)]
    pub native: Option<usize>,
    #[serde(default)]
    pub target: Option<usize>,
    /// Fixed service time instead of an exponential draw.
    #[serde(default)]
    pub service: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    #[serde(default)]
    pub lambda_r: f64,
    #[serde(default)]
    pub lambda_w: f64,
    #[serde(default)]
    pub lambda_rep: f64,
    pub mu_r: f64,
    pub mu_w: f64,
    /// Defaults to `mu_r`.
    #[serde(default)]
    pub mu_rep: Option<f64>,
    #[serde(default)]
    pub backlog_reads: usize,
    #[serde(default)]
    pub backlog_writes: usize,
    #[serde(default)]
    pub script: Vec<ScriptedRequest>,
}

impl WorkloadParams {
    fn mu(&self, kind: AccessKind) -> f64 {
        match kind {
            AccessKind::Read => self.mu_r,
            AccessKind::Write => self.mu_w,
            AccessKind::Repair => self.mu_rep.unwrap_or(self.mu_r),
        }
    }

    fn lambda(&self, kind: AccessKind) -> f64 {
        match kind {
            AccessKind::Read => self.lambda_r,
            AccessKind::Write => self.lambda_w,
            AccessKind::Repair => self.lambda_rep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: CodeParams,
    pub footprint: FootprintMatrix,
    pub slot: SlotPolicy,
    pub t0: f64,
    pub workload: WorkloadParams,
    pub topology: TopologySpec,
    pub message_delay: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Keep every trace row in memory; metrics are collected either way.
    pub keep_trace: bool,
    /// Check lock table and node state agreement after every event.
    pub paranoid: bool,
    pub max_events: u64,
}

const STREAM_ARRIVALS: [u64; 3] = [1, 2, 3];
const STREAM_SERVICE: u64 = 4;
const STREAM_ROUTING: u64 = 5;
const STREAM_CHOICE: u64 = 6;

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(n);
    r
}

fn kind_index(kind: AccessKind) -> usize {
    match kind {
        AccessKind::Read => 0,
        AccessKind::Write => 1,
        AccessKind::Repair => 2,
    }
}

impl SimConfig {
    /// Single server: one chunk, writes only, one request per slot.
    pub fn mm1(lambda: f64, mu: f64, horizon: f64, seed: u64) -> Self {
        Self {
            params: CodeParams {
                nodes: 2,
                code_chunks: 2,
                k: 1,
                d: 1,
                alpha: 1,
                beta: 1,
                q: 1,
                file_size: None,
            },
            footprint: FootprintMatrix::explicit(2, vec![vec![0]]).expect("valid row"),
            slot: SlotPolicy::Count(1),
            t0: 1e12,
            workload: WorkloadParams {
                lambda_r: 0.0,
                lambda_w: lambda,
                lambda_rep: 0.0,
                mu_r: mu,
                mu_w: mu,
                mu_rep: None,
                backlog_reads: 0,
                backlog_writes: 0,
                script: Vec::new(),
            },
            topology: TopologySpec::Path,
            message_delay: 0.0,
            horizon,
            seed,
            keep_trace: false,
            paranoid: false,
            max_events: u64::MAX,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let cfg = |m: String| SimError::Config(m);
        validate_params(self.params.clone()).map_err(|e| cfg(e.to_string()))?;
        if self.footprint.chunk_count() != self.params.total_chunks() || self.footprint.k() != self.params.k {
            return Err(cfg(format!(
                "footprint must have k = {} rows over {} chunks",
                self.params.k,
                self.params.total_chunks()
            )));
        }
        self.slot.validate()?;
        DeadlockConfig::new(self.t0)?;
        let w = &self.workload;
        for (name, v) in [("lambda_r", w.lambda_r), ("lambda_w", w.lambda_w), ("lambda_rep", w.lambda_rep)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(cfg(format!("{name} must be a finite non-negative rate")));
            }
        }
        for kind in [AccessKind::Read, AccessKind::Write, AccessKind::Repair] {
            let mu = w.mu(kind);
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(cfg(format!("service rate for {kind} must be positive")));
            }
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(cfg("horizon must be finite and non-negative".into()));
        }
        if !(self.message_delay >= 0.0 && self.message_delay.is_finite()) {
            return Err(cfg("message_delay must be finite and non-negative".into()));
        }
        for (i, s) in w.script.iter().enumerate() {
            if !(s.time >= 0.0 && s.time.is_finite()) {
                return Err(cfg(format!("script[{i}]: bad time")));
            }
            if s.native.is_some_and(|u| u >= self.params.k) {
                return Err(cfg(format!("script[{i}]: native index out of range")));
            }
            if s.target.is_some_and(|t| t >= self.params.nodes) {
                return Err(cfg(format!("script[{i}]: target node out of range")));
            }
            if s.service.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
                return Err(cfg(format!("script[{i}]: bad service time")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
    pub events: u64,
    pub completion_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Stream(AccessKind),
    Script(usize),
    Backlog(AccessKind),
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Arrival(Source),
    Solicit { req: RequestId, epoch: u64 },
    Deliver { req: RequestId, epoch: u64, chunk: ChunkId, voted: bool },
    Completion { req: RequestId },
    Timeout { generation: u64 },
}

impl Event {
    fn rank(&self) -> u8 {
        match self {
            Event::Completion { .. } => 0,
            Event::Deliver { .. } => 1,
            Event::Solicit { .. } => 2,
            Event::Arrival(_) => 3,
            Event::Timeout { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    time: f64,
    rank: u8,
    priority: i64,
    arrival: f64,
    id: u64,
    seq: u64,
    event: Event,
}

impl Queued {
    fn key_cmp(&self, o: &Self) -> Ordering {
        self.time
            .total_cmp(&o.time)
            .then(self.rank.cmp(&o.rank))
            .then(o.priority.cmp(&self.priority))
            .then(self.arrival.total_cmp(&o.arrival))
            .then(self.id.cmp(&o.id))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        self.key_cmp(o) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Queued {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, o: &Self) -> Ordering {
        o.key_cmp(self)
    }
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    coord: Coordinator,
    sched: Scheduler,
    heap: BinaryHeap<Queued>,
    seq: u64,
    next_id: u64,
    arrivals: [ChaCha8Rng; 3],
    service: ChaCha8Rng,
    choice: ChaCha8Rng,
    fixed_service: BTreeMap<RequestId, f64>,
    /// Deadlock victims since the last quorum.
    recent_victims: BTreeSet<RequestId>,
    trace: Vec<TraceRecord>,
    metrics: MetricsBuilder,
    events: u64,
    completion_times: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let p = &cfg.params;
        let placement = place_code(&cfg.footprint, p.nodes, p.alpha).map_err(|e| SimError::Config(e.to_string()))?;
        let topology = Topology::from_spec(p.nodes, &cfg.topology).map_err(|e| SimError::Config(e.to_string()))?;
        let coord = Coordinator::new(
            p.clone(),
            &cfg.footprint,
            &placement,
            topology,
            cfg.message_delay,
            stream(cfg.seed, STREAM_ROUTING),
        )?;
        let sched = Scheduler::new(cfg.slot, DeadlockConfig::new(cfg.t0)?)?;
        Ok(Self {
            cfg,
            coord,
            sched,
            heap: BinaryHeap::new(),
            seq: 0,
            next_id: 0,
            arrivals: STREAM_ARRIVALS.map(|s| stream(cfg.seed, s)),
            service: stream(cfg.seed, STREAM_SERVICE),
            choice: stream(cfg.seed, STREAM_CHOICE),
            fixed_service: BTreeMap::new(),
            recent_victims: BTreeSet::new(),
            trace: Vec::new(),
            metrics: MetricsBuilder::new(),
            events: 0,
            completion_times: Vec::new(),
        })
    }

    fn emit(&mut self, rec: TraceRecord) {
        self.metrics.push(&rec);
        if self.cfg.keep_trace {
            self.trace.push(rec);
        }
    }

    fn drain_trace(&mut self) {
        for rec in self.coord.take_trace() {
            self.emit(rec);
        }
    }

    fn push(&mut self, time: f64, event: Event) {
        let (priority, arrival, id) = match event {
            Event::Solicit { req, .. } | Event::Deliver { req, .. } | Event::Completion { req } => {
                let r = self.coord.request(req);
                (r.map_or(0, |r| r.priority), r.map_or(time, |r| r.arrival), req.0)
            }
            _ => (0, time, 0),
        };
        self.seq += 1;
        self.heap.push(Queued {
            time,
            rank: event.rank(),
            priority,
            arrival,
            id,
            seq: self.seq,
            event,
        });
    }

    fn write_meta(&mut self) {
        let p = &self.cfg.params;
        let c = self.cfg;
        self.emit(TraceRecord::new(0.0, TraceEvent::Meta).detail(format!(
            "nodes={};n={};k={};d={};alpha={};beta={};q={};t0={};delay={};horizon={};seed={}",
            p.nodes, p.code_chunks, p.k, p.d, p.alpha, p.beta, p.q, c.t0, c.message_delay, c.horizon, c.seed
        )));
        let edges: Vec<String> = self
            .coord
            .topology()
            .edges()
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect();
        self.emit(TraceRecord::new(0.0, TraceEvent::Meta).detail(format!("edges={}", edges.join(" "))));
        for u in 0..p.k {
            let chunks: Vec<String> = self
                .coord
                .footprint_chunks(u)
                .into_iter()
                .flatten()
                .map(|c| format!("{}:{}", c.node, c.slot))
                .collect();
            self.emit(TraceRecord::new(0.0, TraceEvent::Meta).detail(format!("native={u};chunks={}", chunks.join(" "))));
        }
        let zeros = vec!["0"; p.nodes].join(" ");
        self.emit(TraceRecord::new(0.0, TraceEvent::Wdt).detail(zeros));
    }

    fn schedule_stream(&mut self, kind: AccessKind, now: f64) -> Result<(), SimError> {
        let rate = self.cfg.workload.lambda(kind);
        if rate <= 0.0 {
            return Ok(());
        }
        let t = now + sample_interarrival(rate, &mut self.arrivals[kind_index(kind)])?;
        if t < self.cfg.horizon {
            self.push(t, Event::Arrival(Source::Stream(kind)));
        }
        Ok(())
    }

    fn arrive(&mut self, source: Source, now: f64) -> Result<(), SimError> {
        let (kind, native, target, service) = match source {
            Source::Stream(k) | Source::Backlog(k) => (k, None, None, None),
            Source::Script(i) => {
                let s = &self.cfg.workload.script[i];
                (s.kind, s.native, s.target, s.service)
            }
        };
        let native = match kind {
            AccessKind::Write => Some(native.unwrap_or_else(|| self.choice.random_range(0..self.cfg.params.k))),
            _ => None,
        };
        let target = match kind {
            AccessKind::Repair => Some(target.unwrap_or_else(|| self.choice.random_range(0..self.cfg.params.nodes))),
            _ => None,
        };
        let id = RequestId(self.next_id);
        self.next_id += 1;
        if let Some(s) = service {
            self.fixed_service.insert(id, s);
        }
        let (slot, start) = self.sched.enqueue(id, now, 0);
        self.coord.register(id, kind, native, target, now, slot, 0)?;
        if start {
            self.coord.start(id, now)?;
        }
        if let Source::Stream(k) = source {
            self.schedule_stream(k, now)?;
        }
        Ok(())
    }

    fn resolve(&mut self, now: f64) -> Result<(), SimError> {
        let pending = self.sched.pending();
        let mut ratios = Vec::with_capacity(pending.len());
        for &id in &pending {
            let q = self.coord.quorum_of(id)?;
            ratios.push((id, request_vote_ratio(self.coord.votes_held(id)?, q)));
        }
        if pending.iter().all(|id| self.recent_victims.contains(id)) {
            self.recent_victims.clear();
        }
        let victims = select_victims(&ratios, &self.recent_victims);
        self.recent_victims.extend(victims.iter().copied());
        let priorities = self.sched.demote(&victims, now)?;
        self.drain_trace();
        let join = |ids: &[RequestId]| ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        let ratio_text: Vec<String> = ratios.iter().map(|(id, r)| format!("{id}:{r}")).collect();
        self.emit(TraceRecord::new(now, TraceEvent::Deadlock).detail(format!(
            "round={};pending={};demoted={};ratios={}",
            self.sched.rounds(),
            join(&pending),
            join(&victims),
            ratio_text.join(" ")
        )));
        for (id, prio) in victims.iter().zip(priorities) {
            let ratio = ratios
                .iter()
                .find(|(r, _)| r == id)
                .map(|(_, v)| v.to_string())
                .unwrap_or_default();
            self.coord.demote(*id, prio, now, &format!("prio={prio};ratio={ratio}"))?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event, now: f64) -> Result<(), SimError> {
        match ev {
            Event::Arrival(src) => self.arrive(src, now)?,
            Event::Solicit { req, epoch } => self.coord.on_solicit(req, epoch, now)?,
            Event::Deliver { req, epoch, chunk, voted } => self.coord.on_delivery(req, epoch, chunk, voted, now)?,
            Event::Completion { req } => {
                self.coord.complete(req, now)?;
                self.completion_times.push(now);
                for id in self.sched.note_done(req, now)? {
                    self.coord.start(id, now)?;
                }
            }
            Event::Timeout { generation } => {
                if self.sched.check_timeout(now, generation) {
                    self.resolve(now)?;
                }
            }
        }
        loop {
            let fx = self.coord.take_effects();
            if fx.is_empty() {
                break;
            }
            for e in fx {
                match e {
                    Effect::Deliver {
                        at,
                        request,
                        epoch,
                        chunk,
                        voted,
                    } => self.push(
                        at,
                        Event::Deliver {
                            req: request,
                            epoch,
                            chunk,
                            voted,
                        },
                    ),
                    Effect::Solicit { at, request, epoch } => self.push(at, Event::Solicit { req: request, epoch }),
                    Effect::Quorum { request } => {
                        self.sched.note_quorum(request, now)?;
                        self.recent_victims.clear();
                        let kind = self.coord.request(request).map(|r| r.kind).unwrap_or(AccessKind::Read);
                        let service = match self.fixed_service.remove(&request) {
                            Some(s) => s,
                            None => sample_interarrival(self.cfg.workload.mu(kind), &mut self.service)?,
                        };
                        self.push(now + service, Event::Completion { req: request });
                    }
                }
            }
        }
        if let Some((at, generation)) = self.sched.take_timer() {
            self.push(at, Event::Timeout { generation });
        }
        self.drain_trace();
        if self.cfg.paranoid {
            self.coord
                .check_consistency()
                .map_err(|msg| SimError::Invariant { time: now, msg })?;
        }
        Ok(())
    }

    fn run(mut self) -> Result<SimOutput, SimError> {
        self.write_meta();
        let w = &self.cfg.workload;
        for _ in 0..w.backlog_reads {
            self.push(0.0, Event::Arrival(Source::Backlog(AccessKind::Read)));
        }
        for _ in 0..w.backlog_writes {
            self.push(0.0, Event::Arrival(Source::Backlog(AccessKind::Write)));
        }
        for (i, s) in w.script.iter().enumerate() {
            self.push(s.time, Event::Arrival(Source::Script(i)));
        }
        for kind in [AccessKind::Read, AccessKind::Write, AccessKind::Repair] {
            self.schedule_stream(kind, 0.0)?;
        }
        let mut now = 0.0;
        while let Some(q) = self.heap.pop() {
            now = q.time;
            self.events += 1;
            if self.events > self.cfg.max_events {
                return Err(SimError::EventLimit(self.cfg.max_events));
            }
            self.handle(q.event, now)?;
        }
        if let Some(r) = self.coord.requests().next() {
            return Err(SimError::Invariant {
                time: now,
                msg: format!("request {} never completed", r.id),
            });
        }
        if !self.coord.lock_table().is_empty() {
            return Err(SimError::Invariant {
                time: now,
                msg: "locks left in the table after the run drained".into(),
            });
        }
        let end = TraceRecord::new(now, TraceEvent::End).detail(format!("events={}", self.events));
        self.emit(end);
        Ok(SimOutput {
            trace: self.trace,
            metrics: self.metrics.finish(),
            events: self.events,
            completion_times: self.completion_times,
        })
    }
}

/// Runs the configuration to its horizon, then lets every admitted request
/// finish.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    Engine::new(cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::FootprintMode;

    pub(crate) fn mixed(seed: u64, horizon: f64) -> SimConfig {
        let params = CodeParams {
            nodes: 6,
            code_chunks: 8,
            k: 2,
            d: 3,
            alpha: 2,
            beta: 1,
            q: 3,
            file_size: None,
        };
        let footprint = FootprintMatrix::from_mode(&params, &FootprintMode::Uniform { seed: 11 }).unwrap();
        SimConfig {
            params,
            footprint,
            slot: SlotPolicy::Count(4),
            t0: 2.0,
            workload: WorkloadParams {
                lambda_r: 2.0,
                lambda_w: 1.0,
                lambda_rep: 0.3,
                mu_r: 4.0,
                mu_w: 4.0,
                mu_rep: None,
                backlog_reads: 0,
                backlog_writes: 0,
                script: Vec::new(),
            },
            topology: TopologySpec::Path,
            message_delay: 0.01,
            horizon,
            seed,
            keep_trace: true,
            paranoid: true,
            max_events: 10_000_000,
        }
    }

    #[test]
    fn exponential_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_interarrival(10.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.1).abs() < 0.001, "{mean}");
        assert!(sample_interarrival(0.0, &mut rng).is_err());
        let big: f64 = (0..1000).map(|_| sample_interarrival(1e9, &mut rng).unwrap()).fold(0.0, f64::max);
        assert!(big < 1e-6);
    }

    #[test]
    fn fixed_seed_reproduces_samples() {
        let a: Vec<f64> = {
            let mut r = stream(5, 1);
            (0..10).map(|_| sample_interarrival(2.0, &mut r).unwrap()).collect()
        };
        let mut r = stream(5, 1);
        let b: Vec<f64> = (0..10).map(|_| sample_interarrival(2.0, &mut r).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_run_drains_and_is_deterministic() {
        let cfg = mixed(7, 200.0);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.metrics, b.metrics);
        let m = &a.metrics;
        for k in [AccessKind::Read, AccessKind::Write, AccessKind::Repair] {
            assert!(m.arrivals_of(k) > 0);
            assert_eq!(m.arrivals_of(k), m.completions_of(k));
        }
        assert_eq!(record_metrics(&a.trace), a.metrics);
    }

    #[test]
    fn no_write_rate_means_no_writes() {
        let mut cfg = mixed(1, 50.0);
        cfg.workload.lambda_w = 0.0;
        let out = run(&cfg).unwrap();
        assert!(out.trace.iter().all(|r| r.kind != Some(AccessKind::Write)));
    }

    #[test]
    fn arrival_count_matches_poisson_mean() {
        let mut cfg = SimConfig::mm1(0.0, 1.0, 1000.0, 9);
        cfg.workload.lambda_r = 10.0;
        cfg.workload.mu_r = 1e6;
        let out = run(&cfg).unwrap();
        let n = out.metrics.arrivals_of(AccessKind::Read) as f64;
        assert!((n - 10_000.0).abs() < 3.0 * 10_000f64.sqrt(), "{n}");
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = mixed(1, 10.0);
        cfg.workload.mu_w = 0.0;
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        let mut cfg = mixed(1, 10.0);
        cfg.t0 = 0.0;
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn event_limit_is_enforced() {
        let mut cfg = mixed(1, 100.0);
        cfg.max_events = 10;
        assert!(matches!(run(&cfg), Err(SimError::EventLimit(10))));
    }
}
