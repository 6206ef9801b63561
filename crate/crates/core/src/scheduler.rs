//! Request queue: slots, priorities, deadlock detection by timeout and the
//! one-fourth demotion rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::RequestId;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("slot window must be positive, got {0}")]
    BadWindow(f64),
    #[error("slot count must be at least 1")]
    BadCount,
    #[error("t0 must be positive, got {0}")]
    BadTimeout(f64),
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
}

/// How arrivals are grouped into slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlotPolicy {
    /// All requests arriving within the same window of this length.
    TimeWindow(f64),
    /// Consecutive runs of this many arrivals.
    Count(usize),
}

impl SlotPolicy {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        match *self {
            SlotPolicy::TimeWindow(w) if !(w > 0.0 && w.is_finite()) => Err(SchedulerError::BadWindow(w)),
            SlotPolicy::Count(0) => Err(SchedulerError::BadCount),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlockConfig {
    pub t0: f64,
}

impl DeadlockConfig {
    /// Fraction of the pending requests demoted per round.
    pub const DEMOTION_FRACTION: (usize, usize) = (1, 4);

    pub fn new(t0: f64) -> Result<Self, SchedulerError> {
        if t0 > 0.0 {
            Ok(Self { t0 })
        } else {
            Err(SchedulerError::BadTimeout(t0))
        }
    }
}

/// Votes held over votes needed, as an exact fraction.
pub fn request_vote_ratio(votes: usize, quorum: usize) -> Ratio<u64> {
    assert!(quorum > 0, "quorum must be positive");
    Ratio::new(votes as u64, quorum as u64)
}

/// Number of requests demoted out of `pending`.
pub fn demotion_count(pending: usize) -> usize {
    let (num, den) = DeadlockConfig::DEMOTION_FRACTION;
    (pending * num).div_ceil(den)
}

/// Picks the minimum-ratio quarter of `pending`, ties by ascending id.
pub fn resolve_deadlock(pending: &[(RequestId, Ratio<u64>)]) -> Vec<RequestId> {
    let mut sorted = pending.to_vec();
    sorted.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted.truncate(demotion_count(pending.len()));
    sorted.into_iter().map(|(id, _)| id).collect()
}

/// Same quota as [`resolve_deadlock`], with two preferences ahead of the
/// ratio order: requests not in `recent` come first, and requests holding
/// votes come before requests holding none, since demoting those frees
/// nothing. `recent` lists victims of earlier rounds with no quorum in
/// between, so repeated rounds rotate through the pending set.
pub fn select_victims(pending: &[(RequestId, Ratio<u64>)], recent: &BTreeSet<RequestId>) -> Vec<RequestId> {
    let quota = demotion_count(pending.len());
    let mut order = pending.to_vec();
    order.sort_by_key(|&(id, r)| (recent.contains(&id), *r.numer() == 0, r, id));
    order.into_iter().take(quota).map(|(id, _)| id).collect()
}

/// True when requests are pending and none completed a quorum since `since`.
pub fn detect_deadlock(now: f64, since: f64, cfg: &DeadlockConfig, pending: usize) -> bool {
    pending > 0 && now >= since + cfg.t0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub id: RequestId,
    pub slot: u64,
    pub priority: i64,
    pub arrival: f64,
    pub at_quorum: bool,
    pub done: bool,
}

/// Priority descending, then arrival, then id.
pub fn action_order(a: &Member, b: &Member) -> Ordering {
    b.priority
        .cmp(&a.priority)
        .then(a.arrival.total_cmp(&b.arrival))
        .then(a.id.cmp(&b.id))
}

pub fn next_actions(members: &[Member]) -> Vec<RequestId> {
    let mut m = members.to_vec();
    m.sort_by(action_order);
    m.into_iter().map(|m| m.id).collect()
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: SlotPolicy,
    cfg: DeadlockConfig,
    arrivals: u64,
    members: BTreeMap<RequestId, Member>,
    // unfinished members per slot
    slots: BTreeMap<u64, BTreeSet<RequestId>>,
    running: Option<u64>,
    clock: f64,
    generation: u64,
    timer: Option<(f64, u64)>,
    rounds: u64,
}

impl Scheduler {
    pub fn new(policy: SlotPolicy, cfg: DeadlockConfig) -> Result<Self, SchedulerError> {
        policy.validate()?;
        DeadlockConfig::new(cfg.t0)?;
        Ok(Self {
            policy,
            cfg,
            arrivals: 0,
            members: BTreeMap::new(),
            slots: BTreeMap::new(),
            running: None,
            clock: 0.0,
            generation: 0,
            timer: None,
            rounds: 0,
        })
    }

    pub fn config(&self) -> &DeadlockConfig {
        &self.cfg
    }

    pub fn running_slot(&self) -> Option<u64> {
        self.running
    }

    pub fn member(&self, id: RequestId) -> Option<&Member> {
        self.members.get(&id)
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    fn slot_for(&self, now: f64) -> u64 {
        match self.policy {
            SlotPolicy::TimeWindow(w) => (now / w).floor().max(0.0) as u64,
            SlotPolicy::Count(n) => self.arrivals / n as u64,
        }
    }

    /// Running-slot requests that have not completed their quorum.
    pub fn pending(&self) -> Vec<RequestId> {
        let Some(s) = self.running else {
            return Vec::new();
        };
        self.slots
            .get(&s)
            .into_iter()
            .flatten()
            .filter(|id| !self.members[id].at_quorum)
            .copied()
            .collect()
    }

    fn reset_clock(&mut self, now: f64) {
        self.generation += 1;
        self.clock = now;
        self.timer = if self.pending().is_empty() {
            None
        } else {
            Some((now + self.cfg.t0, self.generation))
        };
    }

    /// A timeout check the event loop should schedule, if one was armed
    /// since the last call.
    pub fn take_timer(&mut self) -> Option<(f64, u64)> {
        self.timer.take()
    }

    /// Assigns a slot. Returns the slot and whether the request may start
    /// soliciting right away.
    pub fn enqueue(&mut self, id: RequestId, now: f64, priority: i64) -> (u64, bool) {
        let slot = self.slot_for(now);
        self.arrivals += 1;
        self.members.insert(
            id,
            Member {
                id,
                slot,
                priority,
                arrival: now,
                at_quorum: false,
                done: false,
            },
        );
        self.slots.entry(slot).or_default().insert(id);
        let was_idle = self.pending().is_empty();
        if self.running.is_none() {
            self.running = Some(slot);
        }
        let start = self.running == Some(slot);
        if start && was_idle {
            self.reset_clock(now);
        }
        (slot, start)
    }

    pub fn note_quorum(&mut self, id: RequestId, now: f64) -> Result<(), SchedulerError> {
        self.members
            .get_mut(&id)
            .ok_or(SchedulerError::UnknownRequest(id))?
            .at_quorum = true;
        self.reset_clock(now);
        Ok(())
    }

    /// Marks a request done and advances to the next slot when the running
    /// one empties. Returns requests that may now start, in action order.
    pub fn note_done(&mut self, id: RequestId, now: f64) -> Result<Vec<RequestId>, SchedulerError> {
        let m = self.members.get_mut(&id).ok_or(SchedulerError::UnknownRequest(id))?;
        m.done = true;
        let slot = m.slot;
        if let Some(set) = self.slots.get_mut(&slot) {
            set.remove(&id);
            if set.is_empty() {
                self.slots.remove(&slot);
            }
        }
        let mut started = Vec::new();
        if let Some(s) = self.running {
            if !self.slots.contains_key(&s) {
                self.running = self.slots.keys().next().copied();
                if let Some(next) = self.running {
                    let members: Vec<Member> = self.slots[&next].iter().map(|i| self.members[i]).collect();
                    started = next_actions(&members);
                }
            }
        }
        self.reset_clock(now);
        Ok(started)
    }

    /// True when the armed check `generation` fires on a real deadlock.
    pub fn check_timeout(&self, now: f64, generation: u64) -> bool {
        generation == self.generation && detect_deadlock(now, self.clock, &self.cfg, self.pending().len())
    }

    pub fn detect_deadlock(&self, now: f64) -> bool {
        detect_deadlock(now, self.clock, &self.cfg, self.pending().len())
    }

    /// Lowers the priority of each victim and restarts the clock. Returns the
    /// new priorities.
    pub fn demote(&mut self, ids: &[RequestId], now: f64) -> Result<Vec<i64>, SchedulerError> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let m = self.members.get_mut(id).ok_or(SchedulerError::UnknownRequest(*id))?;
            m.priority -= 1;
            out.push(m.priority);
        }
        self.rounds += 1;
        self.reset_clock(now);
        Ok(out)
    }
}
