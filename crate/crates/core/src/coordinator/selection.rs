use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::chunk_store::{ChunkStore, LockBit};
use crate::ids::{ChunkId, RequestId};

/// A write that holds some of its chunks while waiting for others.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingWriteRecord {
    pub request: RequestId,
    pub done_set: BTreeSet<ChunkId>,
    pub waiting_set: BTreeSet<ChunkId>,
}

impl PendingWriteRecord {
    pub fn new(request: RequestId) -> Self {
        Self {
            request,
            done_set: BTreeSet::new(),
            waiting_set: BTreeSet::new(),
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.done_set.is_disjoint(&self.waiting_set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    Allowed,
    Rejected(RequestId),
}

/// A selection may not touch both the finished and the waiting part of a
/// pending write.
pub fn check_consistency_restriction<'a>(
    candidate: &BTreeSet<ChunkId>,
    records: impl IntoIterator<Item = &'a PendingWriteRecord>,
) -> Restriction {
    for rec in records {
        if !candidate.is_disjoint(&rec.done_set) && !candidate.is_disjoint(&rec.waiting_set) {
            return Restriction::Rejected(rec.request);
        }
    }
    Restriction::Allowed
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("no admissible node left to contact")]
pub struct Starvation;

/// Walks `preference` and keeps each node whose chunks can join the selection
/// without breaking the restriction, until `needed` nodes are chosen.
/// `selected` holds the chunks already locked by the request.
pub fn select_nodes<F>(
    preference: &[usize],
    needed: usize,
    skip: &BTreeSet<usize>,
    selected: &BTreeSet<ChunkId>,
    records: &[PendingWriteRecord],
    mut chunks_of: F,
) -> Result<Vec<(usize, Vec<ChunkId>)>, Starvation>
where
    F: FnMut(usize) -> Vec<ChunkId>,
{
    if needed == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::new();
    let mut selection = selected.clone();
    for &node in preference {
        if chosen.len() == needed {
            break;
        }
        if skip.contains(&node) {
            continue;
        }
        let chunks = chunks_of(node);
        let mut trial = selection.clone();
        trial.extend(chunks.iter().copied());
        if check_consistency_restriction(&trial, records) == Restriction::Allowed {
            selection = trial;
            chosen.push((node, chunks));
        }
    }
    if chosen.is_empty() {
        Err(Starvation)
    } else {
        Ok(chosen)
    }
}

/// Next nodes a read should contact: the highest entries of `preference`
/// not yet held or tried, `k - held.len()` of them.
pub fn read_selection(
    k: usize,
    preference: &[usize],
    held: &BTreeSet<usize>,
    tried: &BTreeSet<usize>,
    store: &ChunkStore,
    records: &[PendingWriteRecord],
) -> Result<Vec<usize>, Starvation> {
    let skip: BTreeSet<usize> = held.union(tried).copied().collect();
    let selected: BTreeSet<ChunkId> = held.iter().flat_map(|&n| store.node_chunks(n)).collect();
    let needed = k.saturating_sub(held.len());
    select_nodes(preference, needed, &skip, &selected, records, |n| {
        store.node_chunks(n).collect()
    })
    .map(|v| v.into_iter().map(|(n, _)| n).collect())
}

/// The `beta` chunks of `node` a repair should ask for: chunks that are not
/// write locked first, then by slot.
pub fn repair_chunks(store: &ChunkStore, node: usize, beta: usize) -> Vec<ChunkId> {
    let mut chunks: Vec<ChunkId> = store.node_chunks(node).collect();
    chunks.sort_by_key(|&c| (store.get(c).lock_bit() == LockBit::Write, c.slot));
    chunks.truncate(beta);
    chunks.sort();
    chunks
}

/// Helper nodes for a repair, with the chunks to download from each.
pub fn repair_selection(
    d: usize,
    beta: usize,
    preference: &[usize],
    skip: &BTreeSet<usize>,
    store: &ChunkStore,
    records: &[PendingWriteRecord],
) -> Result<BTreeMap<usize, Vec<ChunkId>>, Starvation> {
    select_nodes(preference, d, skip, &BTreeSet::new(), records, |n| {
        repair_chunks(store, n, beta)
    })
    .map(|v| v.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk_store::LockKind;
    use crate::ids::AccessKind;
    use crate::routing::{Topology, WriteDistanceTable};

    fn ids(nodes: &[usize]) -> BTreeSet<ChunkId> {
        nodes.iter().map(|&n| ChunkId::new(n, 0)).collect()
    }

    fn record(done: &[usize], waiting: &[usize]) -> PendingWriteRecord {
        PendingWriteRecord {
            request: RequestId(9),
            done_set: ids(done),
            waiting_set: ids(waiting),
        }
    }

    #[test]
    fn restriction_rejects_straddling_selection() {
        let rec = [record(&[1, 2], &[3, 4])];
        assert_eq!(
            check_consistency_restriction(&ids(&[1, 3]), &rec),
            Restriction::Rejected(RequestId(9))
        );
        assert_eq!(check_consistency_restriction(&ids(&[1, 5]), &rec), Restriction::Allowed);
        assert_eq!(check_consistency_restriction(&ids(&[3, 4, 5]), &rec), Restriction::Allowed);
        assert_eq!(check_consistency_restriction(&BTreeSet::new(), &rec), Restriction::Allowed);
    }

    #[test]
    fn write_distance_example_selection() {
        let topo = Topology::path(5).unwrap();
        let wdt = WriteDistanceTable::compute(&topo, [0, 2].into_iter().collect());
        let store = ChunkStore::new(5, 1);
        let pref = wdt.by_distance();
        let none = BTreeSet::new();
        assert_eq!(read_selection(1, &pref, &none, &none, &store, &[]).unwrap(), vec![4]);
        assert_eq!(read_selection(2, &pref, &none, &none, &store, &[]).unwrap(), vec![4, 3]);
        let held = [4].into_iter().collect();
        assert_eq!(read_selection(2, &pref, &held, &none, &store, &[]).unwrap(), vec![3]);
    }

    #[test]
    fn read_all_nodes_when_k_is_n() {
        let store = ChunkStore::new(4, 2);
        let none = BTreeSet::new();
        let mut got = read_selection(4, &[2, 3, 0, 1], &none, &none, &store, &[]).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn read_selection_skips_restricted_nodes() {
        let store = ChunkStore::new(5, 1);
        let none = BTreeSet::new();
        let held: BTreeSet<usize> = [0].into_iter().collect();
        let rec = [record(&[0, 1], &[2, 3])];
        assert_eq!(read_selection(3, &[0, 1, 2, 3, 4], &held, &none, &store, &rec).unwrap(), vec![1, 4]);
        let tried = [1, 4].into_iter().collect();
        assert_eq!(read_selection(3, &[0, 1, 2, 3, 4], &held, &tried, &store, &rec), Err(Starvation));
    }

    #[test]
    fn repair_counts() {
        let store = ChunkStore::new(6, 2);
        let pref: Vec<usize> = (0..6).collect();
        let sel = repair_selection(3, 1, &pref, &BTreeSet::new(), &store, &[]).unwrap();
        assert_eq!(sel.len(), 3);
        assert!(sel.values().all(|c| c.len() == 1));

        let skip = [5].into_iter().collect();
        let sel = repair_selection(5, 2, &pref, &skip, &store, &[]).unwrap();
        assert_eq!(sel.values().map(Vec::len).sum::<usize>(), 10);
        assert!(!sel.contains_key(&5));
    }

    #[test]
    fn repair_prefers_far_nodes_and_unlocked_chunks() {
        let topo = Topology::path(6).unwrap();
        let wdt = WriteDistanceTable::compute(&topo, [0, 1].into_iter().collect());
        let mut store = ChunkStore::new(6, 2);
        let c = ChunkId::new(5, 0);
        store.get_mut(c).request_vote(AccessKind::Write, RequestId(1)).unwrap();
        store.get_mut(c).apply_lock(LockKind::Write, RequestId(1)).unwrap();
        let sel = repair_selection(3, 1, &wdt.by_distance(), &BTreeSet::new(), &store, &[]).unwrap();
        assert_eq!(sel.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(sel[&5], vec![ChunkId::new(5, 1)]);
    }
}
