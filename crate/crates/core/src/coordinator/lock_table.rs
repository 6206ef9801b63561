use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::chunk_store::{ChunkStore, LockKind};
use crate::ids::{AccessKind, ChunkId, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryKind {
    Read,
    Write,
    WaitingRead,
    WaitingWrite,
}

impl EntryKind {
    pub fn waiting_for(kind: AccessKind) -> Self {
        if kind.is_shared() {
            EntryKind::WaitingRead
        } else {
            EntryKind::WaitingWrite
        }
    }

    pub fn granted(kind: LockKind) -> Self {
        match kind {
            LockKind::Read => EntryKind::Read,
            LockKind::Write => EntryKind::Write,
        }
    }

    pub fn is_granted(&self) -> bool {
        matches!(self, EntryKind::Read | EntryKind::Write)
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Read => "read",
            EntryKind::Write => "write",
            EntryKind::WaitingRead => "waiting-read",
            EntryKind::WaitingWrite => "waiting-write",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LockTableError {
    #[error("request {request} cannot take a {kind:?} lock on chunk {chunk}")]
    Conflict {
        request: RequestId,
        chunk: ChunkId,
        kind: LockKind,
    },
    #[error("request {request} already has an entry on chunk {chunk}")]
    Occupied { request: RequestId, chunk: ChunkId },
}

/// The coordinator's record of every granted and waiting lock, indexed both
/// by chunk and by request.
#[derive(Debug, Clone, Default)]
pub struct LockTable {
    by_chunk: BTreeMap<ChunkId, BTreeMap<RequestId, EntryKind>>,
    by_request: BTreeMap<RequestId, BTreeMap<ChunkId, EntryKind>>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn can_grant(&self, chunk: ChunkId, kind: LockKind) -> bool {
        let Some(entries) = self.by_chunk.get(&chunk) else {
            return true;
        };
        entries.values().all(|e| match (kind, e) {
            (_, EntryKind::WaitingRead | EntryKind::WaitingWrite) => true,
            (LockKind::Read, EntryKind::Read) => true,
            _ => false,
        })
    }

    fn insert(&mut self, req: RequestId, chunk: ChunkId, entry: EntryKind) {
        self.by_chunk.entry(chunk).or_default().insert(req, entry);
        self.by_request.entry(req).or_default().insert(chunk, entry);
    }

    pub fn grant(&mut self, req: RequestId, chunk: ChunkId, kind: LockKind) -> Result<(), LockTableError> {
        if self.entry(req, chunk).is_some() {
            return Err(LockTableError::Occupied { request: req, chunk });
        }
        if !self.can_grant(chunk, kind) {
            return Err(LockTableError::Conflict {
                request: req,
                chunk,
                kind,
            });
        }
        self.insert(req, chunk, EntryKind::granted(kind));
        Ok(())
    }

    pub fn add_waiting(&mut self, req: RequestId, chunk: ChunkId, kind: AccessKind) -> Result<(), LockTableError> {
        match self.entry(req, chunk) {
            Some(e) if e == EntryKind::waiting_for(kind) => Ok(()),
            Some(_) => Err(LockTableError::Occupied { request: req, chunk }),
            None => {
                self.insert(req, chunk, EntryKind::waiting_for(kind));
                Ok(())
            }
        }
    }

    pub fn entry(&self, req: RequestId, chunk: ChunkId) -> Option<EntryKind> {
        self.by_request.get(&req)?.get(&chunk).copied()
    }

    pub fn remove(&mut self, req: RequestId, chunk: ChunkId) -> Option<EntryKind> {
        let e = self.by_request.get_mut(&req)?.remove(&chunk)?;
        if self.by_request[&req].is_empty() {
            self.by_request.remove(&req);
        }
        if let Some(m) = self.by_chunk.get_mut(&chunk) {
            m.remove(&req);
            if m.is_empty() {
                self.by_chunk.remove(&chunk);
            }
        }
        Some(e)
    }

    pub fn entries_of(&self, req: RequestId) -> impl Iterator<Item = (ChunkId, EntryKind)> + '_ {
        self.by_request
            .get(&req)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&c, &e)| (c, e)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (RequestId, ChunkId, EntryKind)> + '_ {
        self.by_request
            .iter()
            .flat_map(|(&r, m)| m.iter().map(move |(&c, &e)| (r, c, e)))
    }

    pub fn held_count(&self, req: RequestId) -> usize {
        self.entries_of(req).filter(|(_, e)| e.is_granted()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.by_request.is_empty()
    }

    /// Nodes with at least one chunk under a write lock.
    pub fn write_nodes(&self) -> BTreeSet<usize> {
        self.by_chunk
            .iter()
            .filter(|(_, m)| m.values().any(|e| *e == EntryKind::Write))
            .map(|(c, _)| c.node)
            .collect()
    }

    /// Compares the table against the node-side bits, in both directions.
    pub fn check_against(&self, store: &ChunkStore) -> Result<(), String> {
        for state in store.iter() {
            let id = state.id();
            state.check_invariants()?;
            let empty = BTreeMap::new();
            let entries = self.by_chunk.get(&id).unwrap_or(&empty);
            let pick = |want: EntryKind| -> BTreeSet<RequestId> {
                entries
                    .iter()
                    .filter(|(_, e)| **e == want)
                    .map(|(r, _)| *r)
                    .collect()
            };
            let writers = pick(EntryKind::Write);
            if writers.len() > 1 || writers.iter().next().copied() != state.writer() {
                return Err(format!("chunk {id}: table writers {writers:?} vs node {:?}", state.writer()));
            }
            if &pick(EntryKind::Read) != state.readers() {
                return Err(format!("chunk {id}: table readers differ from node readers"));
            }
            let mut waiting = pick(EntryKind::WaitingRead);
            waiting.extend(pick(EntryKind::WaitingWrite));
            let queued: BTreeSet<RequestId> = state.waiting().map(|(r, _)| *r).collect();
            if waiting != queued {
                return Err(format!("chunk {id}: table waiters {waiting:?} vs node queue {queued:?}"));
            }
        }
        Ok(())
    }
}
