//! The coordinating node: lock table, vote accounting and the read, write
//! and repair protocols.
//!
//! Every handler takes the current simulation time, mutates node and table
//! state, and queues two kinds of output: [`Effect`]s the event loop must
//! schedule, and trace rows. Nothing here reads a clock or spawns work.

mod lock_table;
mod selection;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use lock_table::{EntryKind, LockTable, LockTableError};
pub use selection::{
    check_consistency_restriction, read_selection, repair_chunks, repair_selection, select_nodes,
    PendingWriteRecord, Restriction, Starvation,
};

use crate::chunk_store::{Bits, ChunkError, ChunkStore, LockKind};
use crate::code_model::{quorum_values, CodeError, CodeParams, FootprintMatrix, QuorumValues};
use crate::ids::{AccessKind, ChunkId, RequestId};
use crate::placement::{PlacementError, PlacementMap};
use crate::routing::{read_preference, Topology, WriteDistanceTable};
use crate::trace::{TraceEvent, TraceRecord};

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Table(#[from] LockTableError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} is not running")]
    NotRunning(RequestId),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
}

type Result<T> = std::result::Result<T, CoordinatorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestState {
    WaitingVotes,
    WaitingOnLocks,
    Running,
}

#[derive(Debug, Clone, Default)]
struct NodeRound {
    expected: usize,
    answered: usize,
    refused: bool,
    votes: Vec<ChunkId>,
}

#[derive(Debug, Clone)]
pub struct Request {
    pub id: RequestId,
    pub kind: AccessKind,
    pub priority: i64,
    pub arrival: f64,
    pub slot: u64,
    pub state: RequestState,
    pub epoch: u64,
    pub native: Option<usize>,
    pub target: Option<usize>,
    targets: BTreeSet<ChunkId>,
    held: BTreeSet<ChunkId>,
    held_nodes: BTreeSet<usize>,
    outstanding: BTreeSet<ChunkId>,
    waits: BTreeSet<ChunkId>,
    tried: BTreeSet<usize>,
    round: BTreeMap<usize, NodeRound>,
    woken: bool,
}

impl Request {
    pub fn held(&self) -> &BTreeSet<ChunkId> {
        &self.held
    }

    pub fn waits(&self) -> &BTreeSet<ChunkId> {
        &self.waits
    }

    /// Footprint for writes; empty for reads and repairs.
    pub fn targets(&self) -> &BTreeSet<ChunkId> {
        &self.targets
    }
}

/// Work the event loop must schedule on the coordinator's behalf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Effect {
    Deliver {
        at: f64,
        request: RequestId,
        epoch: u64,
        chunk: ChunkId,
        voted: bool,
    },
    Solicit {
        at: f64,
        request: RequestId,
        epoch: u64,
    },
    Quorum {
        request: RequestId,
    },
}

pub struct Coordinator {
    params: CodeParams,
    qv: QuorumValues,
    footprints: Vec<BTreeSet<ChunkId>>,
    topology: Topology,
    delay: f64,
    rng: ChaCha8Rng,
    store: ChunkStore,
    table: LockTable,
    wdt: WriteDistanceTable,
    records: BTreeMap<RequestId, PendingWriteRecord>,
    requests: BTreeMap<RequestId, Request>,
    effects: Vec<Effect>,
    trace: Vec<TraceRecord>,
    promoted: VecDeque<(ChunkId, RequestId, AccessKind)>,
    dirty: BTreeSet<ChunkId>,
}

fn bits_change(old: Bits, new: Bits) -> String {
    format!("{old}->{new}")
}

impl Coordinator {
    pub fn new(
        params: CodeParams,
        footprint: &FootprintMatrix,
        placement: &PlacementMap,
        topology: Topology,
        delay: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if topology.len() != params.nodes {
            return Err(CoordinatorError::InvalidRequest(format!(
                "topology has {} nodes, code has {}",
                topology.len(),
                params.nodes
            )));
        }
        let footprints = footprint
            .rows()
            .iter()
            .map(|row| row.iter().map(|&c| placement.locate(c)).collect())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            qv: quorum_values(&params),
            store: ChunkStore::new(params.nodes, params.alpha),
            wdt: WriteDistanceTable::new(params.nodes),
            params,
            footprints,
            topology,
            delay,
            rng,
            table: LockTable::new(),
            records: BTreeMap::new(),
            requests: BTreeMap::new(),
            effects: Vec::new(),
            trace: Vec::new(),
            promoted: VecDeque::new(),
            dirty: BTreeSet::new(),
        })
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn quorums(&self) -> QuorumValues {
        self.qv
    }

    pub fn store(&self) -> &ChunkStore {
        &self.store
    }

    pub fn lock_table(&self) -> &LockTable {
        &self.table
    }

    pub fn wdt(&self) -> &WriteDistanceTable {
        &self.wdt
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn records(&self) -> impl Iterator<Item = &PendingWriteRecord> {
        self.records.values()
    }

    pub fn request(&self, id: RequestId) -> Option<&Request> {
        self.requests.get(&id)
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.requests.values()
    }

    pub fn footprint_chunks(&self, native: usize) -> Option<&BTreeSet<ChunkId>> {
        self.footprints.get(native)
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Votes a request needs before it may execute.
    pub fn quorum_of(&self, id: RequestId) -> Result<usize> {
        let r = self.req(id)?;
        Ok(match r.kind {
            AccessKind::Read => self.qv.r,
            AccessKind::Write => r.targets.len(),
            AccessKind::Repair => self.qv.rep,
        })
    }

    /// Chunk locks currently held by a request.
    pub fn votes_held(&self, id: RequestId) -> Result<usize> {
        Ok(self.req(id)?.held.len())
    }

    fn req(&self, id: RequestId) -> Result<&Request> {
        self.requests.get(&id).ok_or(CoordinatorError::UnknownRequest(id))
    }

    fn req_mut(&mut self, id: RequestId) -> Result<&mut Request> {
        self.requests.get_mut(&id).ok_or(CoordinatorError::UnknownRequest(id))
    }

    fn log(&mut self, rec: TraceRecord) {
        self.trace.push(rec);
    }

    fn row(&self, now: f64, event: TraceEvent, id: RequestId) -> TraceRecord {
        let kind = self.requests[&id].kind;
        TraceRecord::new(now, event).request(id, kind)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn register(
        &mut self,
        id: RequestId,
        kind: AccessKind,
        native: Option<usize>,
        target: Option<usize>,
        arrival: f64,
        slot: u64,
        priority: i64,
    ) -> Result<()> {
        if self.requests.contains_key(&id) {
            return Err(CoordinatorError::InvalidRequest(format!("duplicate request id {id}")));
        }
        let targets = match kind {
            AccessKind::Write => {
                let u = native.ok_or_else(|| CoordinatorError::InvalidRequest("write without native chunk".into()))?;
                self.footprints
                    .get(u)
                    .cloned()
                    .ok_or(CodeError::IndexOutOfRange {
                        index: u,
                        k: self.footprints.len(),
                    })?
            }
            _ => BTreeSet::new(),
        };
        if kind == AccessKind::Repair {
            match target {
                Some(t) if t < self.params.nodes => {}
                _ => return Err(CoordinatorError::InvalidRequest("repair needs a valid target node".into())),
            }
        }
        self.requests.insert(
            id,
            Request {
                id,
                kind,
                priority,
                arrival,
                slot,
                state: RequestState::WaitingVotes,
                epoch: 0,
                native,
                target,
                targets,
                held: BTreeSet::new(),
                held_nodes: BTreeSet::new(),
                outstanding: BTreeSet::new(),
                waits: BTreeSet::new(),
                tried: BTreeSet::new(),
                round: BTreeMap::new(),
                woken: false,
            },
        );
        let mut detail = format!("slot={slot};prio={priority}");
        if let Some(u) = native {
            detail.push_str(&format!(";native={u}"));
        }
        let mut rec = self.row(arrival, TraceEvent::Arrive, id).detail(detail);
        if let Some(t) = target {
            rec = rec.node(t);
        }
        self.log(rec);
        Ok(())
    }

    /// Lets an admitted request start soliciting votes at `now`.
    pub fn start(&mut self, id: RequestId, now: f64) -> Result<()> {
        let epoch = self.req(id)?.epoch;
        self.effects.push(Effect::Solicit {
            at: now,
            request: id,
            epoch,
        });
        Ok(())
    }

    pub fn on_solicit(&mut self, id: RequestId, epoch: u64, now: f64) -> Result<()> {
        let Some(r) = self.requests.get(&id) else {
            return Ok(());
        };
        if r.epoch != epoch || !matches!(r.state, RequestState::WaitingVotes | RequestState::WaitingOnLocks) {
            return Ok(());
        }
        match r.kind {
            AccessKind::Write => self.solicit_write(id, now)?,
            _ => {
                if r.round.is_empty() {
                    self.start_round(id, now)?;
                }
            }
        }
        self.flush(now)
    }

    pub fn on_delivery(&mut self, id: RequestId, epoch: u64, chunk: ChunkId, voted: bool, now: f64) -> Result<()> {
        let Some(r) = self.requests.get(&id) else {
            self.log(TraceRecord::new(now, TraceEvent::Stale).at(chunk));
            return Ok(());
        };
        let live = r.epoch == epoch && matches!(r.state, RequestState::WaitingVotes | RequestState::WaitingOnLocks);
        if !live {
            let rec = self.row(now, TraceEvent::Stale, id).at(chunk);
            self.log(rec);
            return Ok(());
        }
        match r.kind {
            AccessKind::Write => {
                if voted {
                    self.deliver_write_vote(id, chunk, now)?;
                }
            }
            _ => self.deliver_gather(id, chunk, voted, now)?,
        }
        self.flush(now)
    }

    /// Asks one chunk for a vote. Refused requests stay queued at the chunk.
    fn ask(&mut self, id: RequestId, c: ChunkId, now: f64) -> Result<bool> {
        let kind = self.req(id)?.kind;
        let epoch = self.req(id)?.epoch;
        let vote = self.store.get_mut(c).request_vote(kind, id)?;
        let voted = vote.is_some();
        if voted {
            self.req_mut(id)?.outstanding.insert(c);
            let rec = self.row(now, TraceEvent::Vote, id).at(c);
            self.log(rec);
        } else {
            self.table.add_waiting(id, c, kind)?;
            self.req_mut(id)?.waits.insert(c);
            let rec = self.row(now, TraceEvent::Refuse, id).at(c);
            self.log(rec);
            let rec = self.row(now, TraceEvent::Wait, id).at(c);
            self.log(rec);
        }
        if voted || kind.is_shared() {
            self.effects.push(Effect::Deliver {
                at: now + self.delay,
                request: id,
                epoch,
                chunk: c,
                voted,
            });
        }
        Ok(voted)
    }

    fn lock(&mut self, id: RequestId, c: ChunkId, kind: LockKind, now: f64) -> Result<()> {
        let old = self.store.get(c).bits();
        self.store.get_mut(c).apply_lock(kind, id)?;
        self.table.grant(id, c, kind)?;
        let r = self.req_mut(id)?;
        r.outstanding.remove(&c);
        r.held.insert(c);
        let new = self.store.get(c).bits();
        let rec = self.row(now, TraceEvent::Lock, id).at(c).detail(bits_change(old, new));
        self.log(rec);
        Ok(())
    }

    fn discard(&mut self, id: RequestId, c: ChunkId, now: f64) -> Result<()> {
        self.store.get_mut(c).discard_vote(id)?;
        self.req_mut(id)?.outstanding.remove(&c);
        let rec = self.row(now, TraceEvent::Discard, id).at(c);
        self.log(rec);
        self.dirty.insert(c);
        Ok(())
    }

    fn enqueue(&mut self, id: RequestId, c: ChunkId, now: f64) -> Result<()> {
        let kind = self.req(id)?.kind;
        self.store.get_mut(c).enqueue(id, kind);
        self.table.add_waiting(id, c, kind)?;
        self.req_mut(id)?.waits.insert(c);
        let rec = self.row(now, TraceEvent::Wait, id).at(c);
        self.log(rec);
        Ok(())
    }

    fn withdraw_all(&mut self, id: RequestId, now: f64) -> Result<()> {
        let waits = std::mem::take(&mut self.req_mut(id)?.waits);
        for c in waits {
            self.store.get_mut(c).withdraw(id);
            self.table.remove(id, c);
            let rec = self.row(now, TraceEvent::Withdraw, id).at(c);
            self.log(rec);
            self.dirty.insert(c);
        }
        Ok(())
    }

    fn refresh_wdt(&mut self, now: f64) {
        let writers = self.table.write_nodes();
        if &writers != self.wdt.writers() {
            self.wdt.refresh(&self.topology, writers);
            let values: Vec<String> = self.wdt.values().iter().map(u64::to_string).collect();
            self.log(TraceRecord::new(now, TraceEvent::Wdt).detail(values.join(" ")));
        }
    }

    fn update_record(&mut self, id: RequestId, now: f64) -> Result<()> {
        let r = self.req(id)?;
        if r.kind != AccessKind::Write {
            return Ok(());
        }
        let done: BTreeSet<ChunkId> = r.held.clone();
        let waiting: BTreeSet<ChunkId> = r.waits.clone();
        match self.records.get_mut(&id) {
            Some(rec) => {
                rec.done_set = done;
                rec.waiting_set = waiting;
            }
            None if !done.is_empty() && !waiting.is_empty() => {
                self.records.insert(
                    id,
                    PendingWriteRecord {
                        request: id,
                        done_set: done,
                        waiting_set: waiting,
                    },
                );
                let rec = self.row(now, TraceEvent::Record, id).detail("open");
                self.log(rec);
            }
            None => {}
        }
        Ok(())
    }

    fn close_record(&mut self, id: RequestId, now: f64) {
        if self.records.remove(&id).is_some() {
            let rec = self.row(now, TraceEvent::Record, id).detail("close");
            self.log(rec);
        }
    }

    fn solicit_write(&mut self, id: RequestId, now: f64) -> Result<()> {
        let r = self.req(id)?;
        let todo: Vec<ChunkId> = r
            .targets
            .iter()
            .filter(|c| !r.held.contains(c) && !r.outstanding.contains(c) && !r.waits.contains(c))
            .copied()
            .collect();
        for c in todo {
            self.ask(id, c, now)?;
        }
        self.update_record(id, now)
    }

    fn deliver_write_vote(&mut self, id: RequestId, c: ChunkId, now: f64) -> Result<()> {
        if !self.req(id)?.outstanding.contains(&c) {
            return Err(CoordinatorError::Inconsistent(format!("write {id} got an unexpected vote from {c}")));
        }
        if self.table.can_grant(c, LockKind::Write) && self.store.get(c).lock_bit() == crate::chunk_store::LockBit::Free {
            self.lock(id, c, LockKind::Write, now)?;
            self.refresh_wdt(now);
            self.update_record(id, now)?;
            let r = self.req(id)?;
            if r.held == r.targets {
                self.reach_quorum(id, now)?;
            }
        } else {
            self.discard(id, c, now)?;
            self.enqueue(id, c, now)?;
            self.update_record(id, now)?;
        }
        Ok(())
    }

    fn needed_nodes(&self, kind: AccessKind) -> usize {
        match kind {
            AccessKind::Read => self.params.k,
            _ => self.params.d,
        }
    }

    fn start_round(&mut self, id: RequestId, now: f64) -> Result<()> {
        let r = self.req(id)?;
        let kind = r.kind;
        let needed = self.needed_nodes(kind);
        let mut skip: BTreeSet<usize> = r.tried.union(&r.held_nodes).copied().collect();
        skip.extend(r.target);
        let missing = needed - r.held_nodes.len();
        let selected = r.held.clone();
        let preference = read_preference(&self.topology, &self.wdt, needed, &mut self.rng);
        let records: Vec<PendingWriteRecord> = self.records.values().cloned().collect();
        let beta = self.params.beta;
        let store = &self.store;
        let picked = select_nodes(&preference, missing, &skip, &selected, &records, |n| match kind {
            AccessKind::Read => store.node_chunks(n).collect(),
            _ => repair_chunks(store, n, beta),
        });
        self.req_mut(id)?.state = RequestState::WaitingVotes;
        match picked {
            Ok(nodes) => {
                for (node, chunks) in &nodes {
                    let r = self.req_mut(id)?;
                    r.tried.insert(*node);
                    r.round.insert(
                        *node,
                        NodeRound {
                            expected: chunks.len(),
                            ..NodeRound::default()
                        },
                    );
                }
                for (_, chunks) in nodes {
                    for c in chunks {
                        self.ask(id, c, now)?;
                    }
                }
            }
            Err(Starvation) => {
                let r = self.req(id)?;
                if r.woken || (r.waits.is_empty() && !r.tried.is_empty()) {
                    self.retry(id, now)?;
                } else {
                    self.req_mut(id)?.state = RequestState::WaitingOnLocks;
                }
            }
        }
        Ok(())
    }

    /// Forgets which nodes were tried and solicits again from scratch.
    fn retry(&mut self, id: RequestId, now: f64) -> Result<()> {
        self.withdraw_all(id, now)?;
        let r = self.req_mut(id)?;
        r.woken = false;
        r.tried.clear();
        r.state = RequestState::WaitingVotes;
        let epoch = r.epoch;
        self.effects.push(Effect::Solicit {
            at: now,
            request: id,
            epoch,
        });
        Ok(())
    }

    fn deliver_gather(&mut self, id: RequestId, c: ChunkId, voted: bool, now: f64) -> Result<()> {
        let r = self.req_mut(id)?;
        let Some(nr) = r.round.get_mut(&c.node) else {
            return Err(CoordinatorError::Inconsistent(format!("{id} got a reply from uncontacted node {}", c.node)));
        };
        nr.answered += 1;
        if voted {
            nr.votes.push(c);
        } else {
            nr.refused = true;
        }
        if nr.answered < nr.expected {
            return Ok(());
        }
        let nr = r.round.remove(&c.node).unwrap_or_default();
        let grantable = !nr.refused && nr.votes.iter().all(|&v| self.table.can_grant(v, LockKind::Read));
        if grantable {
            for &v in &nr.votes {
                self.lock(id, v, LockKind::Read, now)?;
            }
            self.req_mut(id)?.held_nodes.insert(c.node);
        } else {
            for &v in &nr.votes {
                let blocked = !self.table.can_grant(v, LockKind::Read);
                self.discard(id, v, now)?;
                if blocked {
                    self.enqueue(id, v, now)?;
                }
            }
        }
        let r = self.req(id)?;
        if r.round.is_empty() {
            if r.held_nodes.len() == self.needed_nodes(r.kind) {
                self.reach_quorum(id, now)?;
            } else {
                self.start_round(id, now)?;
            }
        }
        Ok(())
    }

    fn reach_quorum(&mut self, id: RequestId, now: f64) -> Result<()> {
        self.withdraw_all(id, now)?;
        let r = self.req_mut(id)?;
        r.state = RequestState::Running;
        r.tried.clear();
        r.woken = false;
        let votes = r.held.len();
        self.update_record(id, now)?;
        let rec = self.row(now, TraceEvent::Quorum, id).detail(format!("votes={votes}"));
        self.log(rec);
        self.effects.push(Effect::Quorum { request: id });
        Ok(())
    }

    fn release_all(&mut self, id: RequestId, now: f64) -> Result<()> {
        let held = std::mem::take(&mut self.req_mut(id)?.held);
        self.req_mut(id)?.held_nodes.clear();
        for c in held {
            let old = self.store.get(c).bits();
            let woken = self.store.get_mut(c).release_lock(id)?;
            self.table.remove(id, c);
            let new = self.store.get(c).bits();
            let rec = self.row(now, TraceEvent::Release, id).at(c).detail(bits_change(old, new));
            self.log(rec);
            self.promoted.extend(woken.into_iter().map(|(r, k)| (c, r, k)));
        }
        self.refresh_wdt(now);
        Ok(())
    }

    /// Service finished: release every lock, hand freed chunks to their
    /// waiters and forget the request.
    pub fn complete(&mut self, id: RequestId, now: f64) -> Result<()> {
        let r = self.req(id)?;
        if r.state != RequestState::Running {
            return Err(CoordinatorError::NotRunning(id));
        }
        let latency = now - r.arrival;
        self.release_all(id, now)?;
        self.close_record(id, now);
        let rec = self.row(now, TraceEvent::Complete, id).detail(format!("latency={latency}"));
        self.log(rec);
        self.requests.remove(&id);
        self.flush(now)
    }

    /// Deadlock victim: drop votes, locks and queue positions, lower the
    /// priority, and solicit again after one message delay.
    pub fn demote(&mut self, id: RequestId, priority: i64, now: f64, detail: &str) -> Result<()> {
        let r = self.req(id)?;
        if !matches!(r.state, RequestState::WaitingVotes | RequestState::WaitingOnLocks) {
            return Err(CoordinatorError::Inconsistent(format!("cannot demote {id} in state {:?}", r.state)));
        }
        let rec = self.row(now, TraceEvent::Demote, id).detail(detail.to_string());
        self.log(rec);
        let outstanding: Vec<ChunkId> = self.req(id)?.outstanding.iter().copied().collect();
        for c in outstanding {
            self.discard(id, c, now)?;
        }
        self.release_all(id, now)?;
        self.withdraw_all(id, now)?;
        self.close_record(id, now);
        let delay = self.delay;
        let r = self.req_mut(id)?;
        r.epoch += 1;
        r.priority = priority;
        r.tried.clear();
        r.round.clear();
        r.woken = false;
        r.state = RequestState::WaitingVotes;
        let epoch = r.epoch;
        self.effects.push(Effect::Solicit {
            at: now + delay,
            request: id,
            epoch,
        });
        self.flush(now)
    }

    /// Processes promotions until no chunk has anything left to hand out.
    fn flush(&mut self, now: f64) -> Result<()> {
        loop {
            if let Some((c, id, _)) = self.promoted.pop_front() {
                self.on_promoted(id, c, now)?;
                continue;
            }
            let Some(c) = self.dirty.pop_first() else {
                break;
            };
            let woken = self.store.get_mut(c).promote();
            self.promoted.extend(woken.into_iter().map(|(r, k)| (c, r, k)));
        }
        Ok(())
    }

    fn on_promoted(&mut self, id: RequestId, c: ChunkId, now: f64) -> Result<()> {
        // an earlier promotion in the same batch may have made the request
        // withdraw from this queue; let the next waiter have the chunk
        if !self.requests.get(&id).is_some_and(|r| r.waits.contains(&c)) {
            self.dirty.insert(c);
            return Ok(());
        }
        self.table.remove(id, c);
        let rec = self.row(now, TraceEvent::Promote, id).at(c);
        self.log(rec);
        let r = self.req_mut(id)?;
        r.waits.remove(&c);
        match (r.kind, r.state) {
            (AccessKind::Write, RequestState::WaitingVotes | RequestState::WaitingOnLocks) => {
                self.ask(id, c, now)?;
                self.update_record(id, now)?;
            }
            (_, RequestState::WaitingOnLocks) => self.retry(id, now)?,
            (_, RequestState::WaitingVotes) => r.woken = true,
            (_, state) => {
                return Err(CoordinatorError::Inconsistent(format!(
                    "{id} promoted at {c} while {state:?}"
                )))
            }
        }
        Ok(())
    }

    /// Checks the lock table against node state and every running request
    /// against its quorum.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        self.table.check_against(&self.store)?;
        for rec in self.records.values() {
            if !rec.is_disjoint() {
                return Err(format!("record of {} has overlapping sets", rec.request));
            }
        }
        let alpha = self.params.alpha;
        for r in self.requests.values() {
            let granted: BTreeSet<ChunkId> = self
                .table
                .entries_of(r.id)
                .filter(|(_, e)| e.is_granted())
                .map(|(c, _)| c)
                .collect();
            if granted != r.held {
                return Err(format!("request {} held set disagrees with the table", r.id));
            }
            if r.state != RequestState::Running {
                continue;
            }
            let nodes: BTreeSet<usize> = r.held.iter().map(|c| c.node).collect();
            let ok = match r.kind {
                AccessKind::Read => nodes.len() == self.params.k && r.held.len() == self.qv.r && r.held.len() == nodes.len() * alpha,
                AccessKind::Write => r.held == r.targets,
                AccessKind::Repair => {
                    nodes.len() == self.params.d
                        && r.held.len() == self.qv.rep
                        && r.target.is_none_or(|t| !nodes.contains(&t))
                }
            };
            if !ok {
                return Err(format!("running {} {} holds the wrong quorum", r.kind, r.id));
            }
        }
        let fresh = WriteDistanceTable::compute(&self.topology, self.table.write_nodes());
        if fresh != self.wdt {
            return Err("write distance table is stale".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{assign, build_groups};
    use rand::SeedableRng;

    fn coordinator(nodes: usize, k: usize, alpha: usize, rows: Vec<Vec<usize>>, delay: f64) -> Coordinator {
        let params = CodeParams {
            nodes,
            code_chunks: nodes.max(k + 1),
            k,
            d: k,
            alpha,
            beta: 1,
            q: rows[0].len(),
            file_size: None,
        };
        let footprint = FootprintMatrix::explicit(nodes * alpha, rows).unwrap();
        let mut placement = assign(&build_groups(&footprint), nodes, alpha).unwrap();
        placement.fill_remaining(nodes * alpha).unwrap();
        let topo = Topology::path(nodes).unwrap();
        Coordinator::new(params, &footprint, &placement, topo, delay, ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    /// Feeds effects back in time order until nothing is left, completing
    /// requests that reach quorum only when `finish` says so.
    fn pump(c: &mut Coordinator, now: f64) -> Vec<RequestId> {
        let mut quorums = Vec::new();
        loop {
            let mut fx = c.take_effects();
            if fx.is_empty() {
                break;
            }
            fx.sort_by(|a, b| rank(a).partial_cmp(&rank(b)).unwrap());
            for e in fx {
                match e {
                    Effect::Deliver {
                        request,
                        epoch,
                        chunk,
                        voted,
                        ..
                    } => c.on_delivery(request, epoch, chunk, voted, now).unwrap(),
                    Effect::Solicit { request, epoch, .. } => c.on_solicit(request, epoch, now).unwrap(),
                    Effect::Quorum { request } => quorums.push(request),
                }
                c.check_consistency().unwrap();
            }
        }
        quorums
    }

    fn rank(e: &Effect) -> (u8, u64) {
        match e {
            Effect::Quorum { request } => (0, request.0),
            Effect::Deliver { request, .. } => (1, request.0),
            Effect::Solicit { request, .. } => (2, request.0),
        }
    }

    #[test]
    fn write_solicits_exactly_its_footprint() {
        let mut c = coordinator(8, 2, 1, vec![vec![1, 3, 7], vec![0, 2, 4]], 0.0);
        c.register(RequestId(1), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
        c.start(RequestId(1), 0.0).unwrap();
        assert_eq!(pump(&mut c, 0.0), vec![RequestId(1)]);
        let votes: Vec<ChunkId> = c
            .take_trace()
            .iter()
            .filter(|r| r.event == TraceEvent::Vote)
            .filter_map(|r| r.chunk_id())
            .collect();
        assert_eq!(votes.len(), 3);
        assert_eq!(c.request(RequestId(1)).unwrap().held(), c.footprint_chunks(0).unwrap());
        assert_eq!(c.wdt().writers().len(), 3);
    }

    #[test]
    fn read_takes_k_adjacent_nodes_when_idle() {
        let mut c = coordinator(6, 2, 2, vec![vec![0, 1, 2], vec![3, 4, 5]], 0.0);
        c.register(RequestId(1), AccessKind::Read, None, None, 0.0, 0, 0).unwrap();
        c.start(RequestId(1), 0.0).unwrap();
        assert_eq!(pump(&mut c, 0.0), vec![RequestId(1)]);
        let r = c.request(RequestId(1)).unwrap();
        let nodes: Vec<usize> = r.held().iter().map(|c| c.node).collect::<BTreeSet<_>>().into_iter().collect();
        assert_eq!(r.held().len(), 4);
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[1], nodes[0] + 1);
    }

    #[test]
    fn read_avoids_write_locked_nodes() {
        let mut c = coordinator(5, 2, 1, vec![vec![0, 2], vec![1]], 0.0);
        c.register(RequestId(1), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
        c.start(RequestId(1), 0.0).unwrap();
        pump(&mut c, 0.0);
        c.register(RequestId(2), AccessKind::Read, None, None, 0.1, 0, 0).unwrap();
        c.start(RequestId(2), 0.1).unwrap();
        assert_eq!(pump(&mut c, 0.1), vec![RequestId(2)]);
        let nodes: BTreeSet<usize> = c.request(RequestId(2)).unwrap().held().iter().map(|c| c.node).collect();
        assert_eq!(nodes, [3, 4].into_iter().collect());
    }

    #[test]
    fn completion_hands_chunk_to_waiting_write() {
        let mut c = coordinator(4, 1, 1, vec![vec![0, 1]], 0.0);
        for id in [1, 2] {
            c.register(RequestId(id), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
            c.start(RequestId(id), 0.0).unwrap();
        }
        assert_eq!(pump(&mut c, 0.0), vec![RequestId(1)]);
        assert_eq!(c.request(RequestId(2)).unwrap().waits().len(), 2);
        c.complete(RequestId(1), 1.0).unwrap();
        assert_eq!(pump(&mut c, 1.0), vec![RequestId(2)]);
        assert!(c.request(RequestId(1)).is_none());
        c.complete(RequestId(2), 2.0).unwrap();
        assert!(c.lock_table().is_empty());
        assert!(!c.wdt().writes_active());
    }

    #[test]
    fn concurrent_reads_share_chunks() {
        let mut c = coordinator(2, 1, 1, vec![vec![0]], 0.0);
        for id in [1, 2] {
            c.register(RequestId(id), AccessKind::Read, None, None, 0.0, 0, 0).unwrap();
            c.start(RequestId(id), 0.0).unwrap();
        }
        assert_eq!(pump(&mut c, 0.0).len(), 2);
        c.complete(RequestId(1), 1.0).unwrap();
        let still: usize = c.store().iter().map(|s| s.readers().len()).sum();
        assert_eq!(still, 1);
    }

    #[test]
    fn delayed_votes_race_and_read_retries() {
        // write and read both get a vote from a free chunk; the write's
        // vote lands first and the read must go elsewhere
        let mut c = coordinator(3, 1, 1, vec![vec![0, 1, 2]], 0.5);
        c.register(RequestId(1), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
        c.register(RequestId(2), AccessKind::Read, None, None, 0.0, 0, 0).unwrap();
        c.on_solicit(RequestId(1), 0, 0.0).unwrap();
        c.on_solicit(RequestId(2), 0, 0.0).unwrap();
        let fx = c.take_effects();
        for e in &fx {
            if let Effect::Deliver { request, epoch, chunk, voted, .. } = *e {
                if request == RequestId(1) {
                    c.on_delivery(request, epoch, chunk, voted, 0.5).unwrap();
                }
            }
        }
        for e in &fx {
            if let Effect::Deliver { request, epoch, chunk, voted, .. } = *e {
                if request == RequestId(2) {
                    c.on_delivery(request, epoch, chunk, voted, 0.5).unwrap();
                }
            }
        }
        c.check_consistency().unwrap();
        assert_eq!(pump(&mut c, 0.5), vec![RequestId(1)]);
        let events: Vec<TraceEvent> = c.take_trace().iter().filter(|r| r.request == Some(RequestId(2))).map(|r| r.event).collect();
        assert!(events.contains(&TraceEvent::Discard));
        assert_eq!(c.request(RequestId(2)).unwrap().state, RequestState::WaitingOnLocks);
        c.complete(RequestId(1), 1.0).unwrap();
        assert_eq!(pump(&mut c, 1.0), vec![RequestId(2)]);
    }

    #[test]
    fn demotion_releases_everything() {
        let mut c = coordinator(2, 1, 1, vec![vec![0, 1]], 0.0);
        c.register(RequestId(1), AccessKind::Read, None, None, 0.0, 0, 0).unwrap();
        c.start(RequestId(1), 0.0).unwrap();
        pump(&mut c, 0.0);
        c.register(RequestId(2), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
        c.start(RequestId(2), 0.0).unwrap();
        pump(&mut c, 0.0);
        let w = c.request(RequestId(2)).unwrap();
        assert_eq!(w.state, RequestState::WaitingVotes);
        c.demote(RequestId(2), -1, 0.5, "").unwrap();
        assert_eq!(c.lock_table().entries_of(RequestId(2)).count(), 0);
        assert_eq!(c.request(RequestId(2)).unwrap().priority, -1);
        assert_eq!(c.request(RequestId(2)).unwrap().epoch, 1);
        c.check_consistency().unwrap();
        c.complete(RequestId(1), 1.0).unwrap();
        assert_eq!(pump(&mut c, 1.0), vec![RequestId(2)]);
    }

    #[test]
    fn stale_delivery_is_logged() {
        let mut c = coordinator(2, 1, 1, vec![vec![0]], 1.0);
        c.register(RequestId(1), AccessKind::Write, Some(0), None, 0.0, 0, 0).unwrap();
        c.on_solicit(RequestId(1), 0, 0.0).unwrap();
        let fx = c.take_effects();
        c.demote(RequestId(1), -1, 0.5, "").unwrap();
        if let Effect::Deliver { request, epoch, chunk, voted, .. } = fx[0] {
            c.on_delivery(request, epoch, chunk, voted, 1.0).unwrap();
        }
        assert!(c.take_trace().iter().any(|r| r.event == TraceEvent::Stale));
        c.check_consistency().unwrap();
    }

    #[test]
    fn complete_requires_running() {
        let mut c = coordinator(2, 1, 1, vec![vec![0]], 0.0);
        assert!(matches!(c.complete(RequestId(4), 0.0), Err(CoordinatorError::UnknownRequest(_))));
        c.register(RequestId(4), AccessKind::Read, None, None, 0.0, 0, 0).unwrap();
        assert!(matches!(c.complete(RequestId(4), 0.0), Err(CoordinatorError::NotRunning(_))));
    }
}
