//! Node-side chunk state: the vote bit, the lock bit and the per-chunk queue
//! of requests waiting for the current lock to go away.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::ids::{AccessKind, ChunkId, RequestId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("chunk {chunk} already has an unresolved vote for request {request}")]
    DuplicateVote { chunk: ChunkId, request: RequestId },
    #[error("illegal lock on chunk {chunk} for request {request}: {reason}")]
    IllegalLock {
        chunk: ChunkId,
        request: RequestId,
        reason: &'static str,
    },
    #[error("request {request} holds no lock on chunk {chunk}")]
    NotHeld { chunk: ChunkId, request: RequestId },
    #[error("chunk {chunk} has no outstanding vote for request {request}")]
    NoVote { chunk: ChunkId, request: RequestId },
}

/// Lock state of one chunk. The three states are stored as `0`, `1`, `2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockBit {
    Free = 0,
    Read = 1,
    Write = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockKind {
    Read,
    Write,
}

impl LockKind {
    pub fn for_access(kind: AccessKind) -> Self {
        if kind.is_shared() {
            LockKind::Read
        } else {
            LockKind::Write
        }
    }
}

/// `(vote bit, lock bit)` pair, rendered as `v1l0` in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bits {
    pub vote: u8,
    pub lock: u8,
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}l{}", self.vote, self.lock)
    }
}

impl std::str::FromStr for Bits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() == 4 && b[0] == b'v' && b[2] == b'l' && b[1].is_ascii_digit() && b[3].is_ascii_digit() {
            Ok(Bits {
                vote: b[1] - b'0',
                lock: b[3] - b'0',
            })
        } else {
            Err(format!("bad bits `{s}`"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Vote {
    pub chunk: ChunkId,
    pub request: RequestId,
}

#[derive(Debug, Clone)]
pub struct ChunkState {
    id: ChunkId,
    vote_bit: bool,
    lock_bit: LockBit,
    readers: BTreeSet<RequestId>,
    writer: Option<RequestId>,
    // votes emitted but not yet turned into a lock or discarded
    outstanding: BTreeMap<RequestId, AccessKind>,
    waiting: VecDeque<(RequestId, AccessKind)>,
}

impl ChunkState {
    pub fn new(id: ChunkId) -> Self {
        Self {
            id,
            vote_bit: true,
            lock_bit: LockBit::Free,
            readers: BTreeSet::new(),
            writer: None,
            outstanding: BTreeMap::new(),
            waiting: VecDeque::new(),
        }
    }

    pub fn id(&self) -> ChunkId {
        self.id
    }

    pub fn vote_bit(&self) -> bool {
        self.vote_bit
    }

    pub fn lock_bit(&self) -> LockBit {
        self.lock_bit
    }

    pub fn bits(&self) -> Bits {
        Bits {
            vote: self.vote_bit as u8,
            lock: self.lock_bit as u8,
        }
    }

    pub fn readers(&self) -> &BTreeSet<RequestId> {
        &self.readers
    }

    pub fn writer(&self) -> Option<RequestId> {
        self.writer
    }

    pub fn waiting(&self) -> impl Iterator<Item = &(RequestId, AccessKind)> {
        self.waiting.iter()
    }

    pub fn is_waiting(&self, req: RequestId) -> bool {
        self.waiting.iter().any(|(r, _)| *r == req)
    }

    pub fn has_outstanding(&self, req: RequestId) -> bool {
        self.outstanding.contains_key(&req)
    }

    pub fn holds(&self, req: RequestId) -> bool {
        self.writer == Some(req) || self.readers.contains(&req)
    }

    fn compatible(&self, kind: AccessKind) -> bool {
        match self.lock_bit {
            LockBit::Free => true,
            LockBit::Read => kind.is_shared(),
            LockBit::Write => false,
        }
    }

    /// Asks the chunk to vote for `req`. A chunk votes only while its vote bit
    /// is set and the current lock admits `kind`; otherwise the request joins
    /// the waiting queue and `None` is returned.
    pub fn request_vote(&mut self, kind: AccessKind, req: RequestId) -> Result<Option<Vote>, ChunkError> {
        if self.outstanding.contains_key(&req) || self.holds(req) {
            return Err(ChunkError::DuplicateVote {
                chunk: self.id,
                request: req,
            });
        }
        if self.vote_bit && self.compatible(kind) {
            self.outstanding.insert(req, kind);
            Ok(Some(Vote {
                chunk: self.id,
                request: req,
            }))
        } else {
            self.enqueue(req, kind);
            Ok(None)
        }
    }

    pub fn enqueue(&mut self, req: RequestId, kind: AccessKind) {
        if !self.is_waiting(req) {
            self.waiting.push_back((req, kind));
        }
    }

    /// Turns the outstanding vote of `req` into a lock.
    pub fn apply_lock(&mut self, kind: LockKind, req: RequestId) -> Result<(), ChunkError> {
        let illegal = |reason| ChunkError::IllegalLock {
            chunk: self.id,
            request: req,
            reason,
        };
        if !self.outstanding.contains_key(&req) {
            return Err(illegal("no vote granted for this request"));
        }
        match kind {
            LockKind::Write => {
                if self.lock_bit != LockBit::Free {
                    return Err(illegal("write lock requires a free chunk"));
                }
                self.writer = Some(req);
                self.vote_bit = false;
                self.lock_bit = LockBit::Write;
            }
            LockKind::Read => {
                if self.lock_bit == LockBit::Write {
                    return Err(illegal("chunk is write locked"));
                }
                self.readers.insert(req);
                self.lock_bit = LockBit::Read;
            }
        }
        self.outstanding.remove(&req);
        Ok(())
    }

    /// Drops an outstanding vote the coordinator decided not to use.
    pub fn discard_vote(&mut self, req: RequestId) -> Result<(), ChunkError> {
        self.outstanding
            .remove(&req)
            .map(|_| ())
            .ok_or(ChunkError::NoVote {
                chunk: self.id,
                request: req,
            })
    }

    /// Releases whatever lock `req` holds and returns the waiters that may
    /// now vote.
    pub fn release_lock(&mut self, req: RequestId) -> Result<Vec<(RequestId, AccessKind)>, ChunkError> {
        if self.writer == Some(req) {
            self.writer = None;
            self.vote_bit = true;
            self.lock_bit = LockBit::Free;
        } else if self.readers.remove(&req) {
            if self.readers.is_empty() {
                self.lock_bit = LockBit::Free;
            }
        } else {
            return Err(ChunkError::NotHeld {
                chunk: self.id,
                request: req,
            });
        }
        Ok(self.promote())
    }

    pub fn withdraw(&mut self, req: RequestId) -> bool {
        let before = self.waiting.len();
        self.waiting.retain(|(r, _)| *r != req);
        before != self.waiting.len()
    }

    /// Pops the waiters that become eligible once the chunk is free with no
    /// vote in flight: every shared request at the head, plus the first
    /// write behind them.
    pub fn promote(&mut self) -> Vec<(RequestId, AccessKind)> {
        let mut out = Vec::new();
        if self.lock_bit != LockBit::Free || !self.outstanding.is_empty() {
            return out;
        }
        while let Some(&(r, kind)) = self.waiting.front() {
            self.waiting.pop_front();
            out.push((r, kind));
            if !kind.is_shared() {
                break;
            }
        }
        out
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let ok = match self.lock_bit {
            LockBit::Write => !self.vote_bit && self.readers.is_empty() && self.writer.is_some(),
            LockBit::Read => self.vote_bit && !self.readers.is_empty() && self.writer.is_none(),
            LockBit::Free => self.vote_bit && self.readers.is_empty() && self.writer.is_none(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!(
                "chunk {} inconsistent: bits {} readers {:?} writer {:?}",
                self.id,
                self.bits(),
                self.readers,
                self.writer
            ))
        }
    }
}

/// All chunks of all nodes, addressed by [`ChunkId`].
#[derive(Debug, Clone)]
pub struct ChunkStore {
    alpha: usize,
    chunks: Vec<ChunkState>,
}

impl ChunkStore {
    pub fn new(nodes: usize, alpha: usize) -> Self {
        let chunks = (0..nodes * alpha)
            .map(|i| ChunkState::new(ChunkId::from_linear(i, alpha)))
            .collect();
        Self { alpha, chunks }
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn nodes(&self) -> usize {
        self.chunks.len() / self.alpha
    }

    pub fn get(&self, id: ChunkId) -> &ChunkState {
        &self.chunks[id.linear(self.alpha)]
    }

    pub fn get_mut(&mut self, id: ChunkId) -> &mut ChunkState {
        &mut self.chunks[id.linear(self.alpha)]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChunkState> {
        self.chunks.iter()
    }

    pub fn node_chunks(&self, node: usize) -> impl Iterator<Item = ChunkId> {
        (0..self.alpha).map(move |s| ChunkId::new(node, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: ChunkId = ChunkId { node: 1, slot: 0 };

    fn r(i: u64) -> RequestId {
        RequestId(i)
    }

    #[test]
    fn free_chunk_votes_for_anything() {
        for kind in [AccessKind::Read, AccessKind::Write, AccessKind::Repair] {
            let mut s = ChunkState::new(C);
            assert_eq!(
                s.request_vote(kind, r(1)).unwrap(),
                Some(Vote { chunk: C, request: r(1) })
            );
        }
    }

    #[test]
    fn duplicate_vote_rejected() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Read, r(1)).unwrap();
        assert_eq!(
            s.request_vote(AccessKind::Read, r(1)),
            Err(ChunkError::DuplicateVote { chunk: C, request: r(1) })
        );
        s.apply_lock(LockKind::Read, r(1)).unwrap();
        assert!(s.request_vote(AccessKind::Read, r(1)).is_err());
    }

    #[test]
    fn read_locked_chunk_admits_repair_not_write() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Read, r(1)).unwrap();
        s.apply_lock(LockKind::Read, r(1)).unwrap();
        assert!(s.request_vote(AccessKind::Repair, r(2)).unwrap().is_some());
        assert!(s.request_vote(AccessKind::Write, r(3)).unwrap().is_none());
        assert!(s.is_waiting(r(3)));
    }

    #[test]
    fn write_locked_chunk_refuses_and_queues() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Write, r(1)).unwrap();
        s.apply_lock(LockKind::Write, r(1)).unwrap();
        assert_eq!(s.bits(), Bits { vote: 0, lock: 2 });
        assert_eq!(s.request_vote(AccessKind::Read, r(2)).unwrap(), None);
        assert!(s.is_waiting(r(2)));
    }

    #[test]
    fn read_lock_bits() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Read, r(1)).unwrap();
        s.apply_lock(LockKind::Read, r(1)).unwrap();
        assert_eq!(s.bits(), Bits { vote: 1, lock: 1 });
        assert_eq!(s.readers().iter().copied().collect::<Vec<_>>(), vec![r(1)]);
        s.request_vote(AccessKind::Read, r(2)).unwrap();
        s.apply_lock(LockKind::Read, r(2)).unwrap();
        assert_eq!(s.bits(), Bits { vote: 1, lock: 1 });
        assert_eq!(s.readers().len(), 2);
        s.check_invariants().unwrap();
    }

    #[test]
    fn illegal_locks() {
        let mut s = ChunkState::new(C);
        assert!(matches!(
            s.apply_lock(LockKind::Read, r(1)),
            Err(ChunkError::IllegalLock { .. })
        ));
        s.request_vote(AccessKind::Read, r(1)).unwrap();
        s.request_vote(AccessKind::Write, r(2)).unwrap();
        s.apply_lock(LockKind::Read, r(1)).unwrap();
        assert!(matches!(
            s.apply_lock(LockKind::Write, r(2)),
            Err(ChunkError::IllegalLock { .. })
        ));
    }

    #[test]
    fn write_release_promotes_first_waiter() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Write, r(1)).unwrap();
        s.apply_lock(LockKind::Write, r(1)).unwrap();
        s.request_vote(AccessKind::Write, r(2)).unwrap();
        s.request_vote(AccessKind::Write, r(3)).unwrap();
        let promoted = s.release_lock(r(1)).unwrap();
        assert_eq!(s.bits(), Bits { vote: 1, lock: 0 });
        assert_eq!(promoted, vec![(r(2), AccessKind::Write)]);
        assert!(s.request_vote(AccessKind::Write, r(2)).unwrap().is_some());
        assert!(s.is_waiting(r(3)));
    }

    #[test]
    fn one_of_two_readers_releases() {
        let mut s = ChunkState::new(C);
        for i in [1, 2] {
            s.request_vote(AccessKind::Read, r(i)).unwrap();
            s.apply_lock(LockKind::Read, r(i)).unwrap();
        }
        s.request_vote(AccessKind::Write, r(3)).unwrap();
        assert!(s.release_lock(r(1)).unwrap().is_empty());
        assert_eq!(s.lock_bit(), LockBit::Read);
    }

    #[test]
    fn sole_reader_release_promotes_waiting_write() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Read, r(1)).unwrap();
        s.apply_lock(LockKind::Read, r(1)).unwrap();
        assert_eq!(s.request_vote(AccessKind::Write, r(2)).unwrap(), None);
        let promoted = s.release_lock(r(1)).unwrap();
        assert_eq!(promoted, vec![(r(2), AccessKind::Write)]);
        assert_eq!(s.bits(), Bits { vote: 1, lock: 0 });
        assert!(s.request_vote(AccessKind::Write, r(2)).unwrap().is_some());
        s.apply_lock(LockKind::Write, r(2)).unwrap();
        assert_eq!(s.bits(), Bits { vote: 0, lock: 2 });
    }

    #[test]
    fn promotion_takes_shared_prefix_and_first_write() {
        let mut s = ChunkState::new(C);
        s.request_vote(AccessKind::Write, r(1)).unwrap();
        s.apply_lock(LockKind::Write, r(1)).unwrap();
        for (i, k) in [
            (2, AccessKind::Read),
            (3, AccessKind::Repair),
            (4, AccessKind::Write),
            (5, AccessKind::Read),
        ] {
            s.request_vote(k, r(i)).unwrap();
        }
        let promoted: Vec<u64> = s.release_lock(r(1)).unwrap().iter().map(|(r, _)| r.0).collect();
        assert_eq!(promoted, vec![2, 3, 4]);
        assert!(s.is_waiting(r(5)));
    }

    #[test]
    fn no_promotion_while_vote_in_flight() {
        let mut s = ChunkState::new(C);
        s.enqueue(r(9), AccessKind::Write);
        s.request_vote(AccessKind::Write, r(1)).unwrap();
        assert!(s.promote().is_empty());
        s.discard_vote(r(1)).unwrap();
        assert_eq!(s.promote(), vec![(r(9), AccessKind::Write)]);
        assert_eq!(s.discard_vote(r(1)), Err(ChunkError::NoVote { chunk: C, request: r(1) }));
    }

    #[test]
    fn release_without_lock() {
        let mut s = ChunkState::new(C);
        assert_eq!(s.release_lock(r(1)), Err(ChunkError::NotHeld { chunk: C, request: r(1) }));
    }

    #[test]
    fn bits_parse_round_trip() {
        let b = Bits { vote: 0, lock: 2 };
        assert_eq!(b.to_string().parse::<Bits>().unwrap(), b);
        assert!("x".parse::<Bits>().is_err());
    }

    proptest::proptest! {
        // Random operation sequences never break the bit invariants.
        #[test]
        fn bit_invariants_hold(ops in proptest::collection::vec((0u8..5, 0u64..4, 0u8..3), 1..60)) {
            let mut s = ChunkState::new(C);
            for (op, req, kind) in ops {
                let req = r(req);
                let kind = [AccessKind::Read, AccessKind::Write, AccessKind::Repair][kind as usize];
                match op {
                    0 => { let _ = s.request_vote(kind, req); }
                    1 => { let _ = s.apply_lock(LockKind::for_access(kind), req); }
                    2 => { let _ = s.release_lock(req); }
                    3 => { let _ = s.discard_vote(req); }
                    _ => { s.withdraw(req); }
                }
                proptest::prop_assert!(s.check_invariants().is_ok());
                proptest::prop_assert_eq!(s.vote_bit(), s.lock_bit() != LockBit::Write);
            }
        }
    }
}
