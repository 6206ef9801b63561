//! Group formation and greedy chunk-to-node packing.
//!
//! Each native chunk's footprint forms a group. Groups are packed onto nodes
//! one after another: the first group fills node 0 and spills onto the
//! following nodes; the next group chosen is the one sharing the most chunks
//! with the node currently being filled, so overlapping footprints end up on
//! the same nodes. A chunk that belongs to several groups is stored once.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::code_model::FootprintMatrix;
use crate::ids::ChunkId;

pub const PLACEMENT_SCHEMA: &str = "#schema=regen-quorum-placement/1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlacementError {
    #[error("{chunks} distinct chunks do not fit on {nodes} nodes of {alpha} slots")]
    CapacityExceeded {
        chunks: usize,
        nodes: usize,
        alpha: usize,
    },
    #[error("chunk {0} is not placed")]
    Unplaced(usize),
    #[error("placement csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub index: usize,
    pub chunks: BTreeSet<usize>,
}

pub fn build_groups(f: &FootprintMatrix) -> Vec<Group> {
    f.rows()
        .iter()
        .enumerate()
        .map(|(index, row)| Group {
            index,
            chunks: row.iter().copied().collect(),
        })
        .collect()
}

/// One greedy decision: the group picked and the content of the node being
/// filled at the moment it was picked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignStep {
    pub group: usize,
    pub context: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementMap {
    nodes: usize,
    alpha: usize,
    location: BTreeMap<usize, ChunkId>,
    by_node: Vec<Vec<usize>>,
    steps: Vec<AssignStep>,
}

impl PlacementMap {
    fn empty(nodes: usize, alpha: usize) -> Self {
        Self {
            nodes,
            alpha,
            location: BTreeMap::new(),
            by_node: vec![Vec::new(); nodes],
            steps: Vec::new(),
        }
    }

    fn put(&mut self, chunk: usize, node: usize) {
        let slot = self.by_node[node].len();
        self.by_node[node].push(chunk);
        self.location.insert(chunk, ChunkId::new(node, slot));
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn locate(&self, chunk: usize) -> Result<ChunkId, PlacementError> {
        self.location
            .get(&chunk)
            .copied()
            .ok_or(PlacementError::Unplaced(chunk))
    }

    pub fn node_chunks(&self, node: usize) -> &[usize] {
        &self.by_node[node]
    }

    pub fn len(&self) -> usize {
        self.location.len()
    }

    pub fn is_empty(&self) -> bool {
        self.location.is_empty()
    }

    pub fn steps(&self) -> &[AssignStep] {
        &self.steps
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, ChunkId)> + '_ {
        self.location.iter().map(|(&c, &id)| (c, id))
    }

    /// Places every chunk id in `0..total` that is still unplaced into the
    /// first free slots, so the whole code is stored.
    pub fn fill_remaining(&mut self, total: usize) -> Result<(), PlacementError> {
        if total > self.nodes * self.alpha {
            return Err(PlacementError::CapacityExceeded {
                chunks: total,
                nodes: self.nodes,
                alpha: self.alpha,
            });
        }
        let mut node = 0;
        for chunk in 0..total {
            if self.location.contains_key(&chunk) {
                continue;
            }
            while self.by_node[node].len() == self.alpha {
                node += 1;
            }
            self.put(chunk, node);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{PLACEMENT_SCHEMA}")?;
        writeln!(out, "nodes,{},alpha,{}", self.nodes, self.alpha)?;
        writeln!(out, "chunk,node,slot")?;
        for (chunk, id) in self.iter() {
            writeln!(out, "{chunk},{},{}", id.node, id.slot)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, PlacementError> {
        let bad = |s: String| PlacementError::Csv(s);
        let mut lines = input.lines();
        let mut next = || lines.next().transpose().map_err(|e| bad(e.to_string()));
        if next()?.as_deref() != Some(PLACEMENT_SCHEMA) {
            return Err(bad("missing schema header".into()));
        }
        let dims = next()?.ok_or_else(|| bad("missing dimensions".into()))?;
        let f: Vec<&str> = dims.split(',').collect();
        let (nodes, alpha) = match f.as_slice() {
            ["nodes", n, "alpha", a] => (
                n.parse().map_err(|_| bad(format!("bad node count `{n}`")))?,
                a.parse().map_err(|_| bad(format!("bad alpha `{a}`")))?,
            ),
            _ => return Err(bad(format!("bad dimensions line `{dims}`"))),
        };
        if next()?.as_deref() != Some("chunk,node,slot") {
            return Err(bad("missing column header".into()));
        }
        let mut rows = Vec::new();
        while let Some(line) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad row `{line}`")))?;
            if v.len() != 3 {
                return Err(bad(format!("bad row `{line}`")));
            }
            rows.push((v[0], v[1], v[2]));
        }
        let mut map = Self::empty(nodes, alpha);
        let mut slots: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); nodes];
        for (chunk, node, slot) in rows {
            if node >= nodes || slot >= alpha || slots[node].insert(slot, chunk).is_some() {
                return Err(bad(format!("bad location for chunk {chunk}")));
            }
            if map.location.insert(chunk, ChunkId::new(node, slot)).is_some() {
                return Err(bad(format!("chunk {chunk} placed twice")));
            }
        }
        for (node, s) in slots.into_iter().enumerate() {
            if s.keys().copied().ne(0..s.len()) {
                return Err(bad(format!("node {node} has gaps in its slots")));
            }
            map.by_node[node] = s.into_values().collect();
        }
        Ok(map)
    }
}

pub fn assign(groups: &[Group], nodes: usize, alpha: usize) -> Result<PlacementMap, PlacementError> {
    let distinct: BTreeSet<usize> = groups.iter().flat_map(|g| g.chunks.iter().copied()).collect();
    if distinct.len() > nodes * alpha {
        return Err(PlacementError::CapacityExceeded {
            chunks: distinct.len(),
            nodes,
            alpha,
        });
    }
    let mut map = PlacementMap::empty(nodes, alpha);
    let mut remaining: Vec<&Group> = groups.iter().collect();
    let mut cursor = 0;
    while !remaining.is_empty() {
        // the node that will receive the next chunk
        while cursor < nodes && map.by_node[cursor].len() == alpha {
            cursor += 1;
        }
        let context: BTreeSet<usize> = if cursor < nodes {
            map.by_node[cursor].iter().copied().collect()
        } else {
            BTreeSet::new()
        };
        let mut best = 0;
        let mut best_overlap = 0;
        for (i, g) in remaining.iter().enumerate() {
            let overlap = g.chunks.intersection(&context).count();
            if overlap > best_overlap {
                best = i;
                best_overlap = overlap;
            }
        }
        let group = remaining.remove(best);
        map.steps.push(AssignStep {
            group: group.index,
            context,
        });
        for &chunk in &group.chunks {
            if map.location.contains_key(&chunk) {
                continue;
            }
            while map.by_node[cursor].len() == alpha {
                cursor += 1;
            }
            map.put(chunk, cursor);
        }
    }
    Ok(map)
}

/// Places the footprint groups, then the chunks no footprint touches.
pub fn place_code(footprint: &FootprintMatrix, nodes: usize, alpha: usize) -> Result<PlacementMap, PlacementError> {
    let mut map = assign(&build_groups(footprint), nodes, alpha)?;
    map.fill_remaining(footprint.chunk_count())?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(index: usize, chunks: &[usize]) -> Group {
        Group {
            index,
            chunks: chunks.iter().copied().collect(),
        }
    }

    #[test]
    fn groups_follow_rows() {
        let f = FootprintMatrix::explicit(8, vec![vec![1, 2, 3], vec![3, 4, 5]]).unwrap();
        let g = build_groups(&f);
        assert_eq!(g, vec![group(0, &[1, 2, 3]), group(1, &[3, 4, 5])]);
        let dense = build_groups(&FootprintMatrix::dense(3, 4));
        assert!(dense.iter().all(|g| g.chunks.len() == 4));
        assert_eq!(build_groups(&FootprintMatrix::dense(1, 4)).len(), 1);
    }

    #[test]
    fn two_group_worked_example() {
        let groups = vec![group(0, &[1, 2, 3]), group(1, &[3, 4, 5])];
        let map = assign(&groups, 3, 2).unwrap();
        assert_eq!(map.node_chunks(0), &[1, 2]);
        assert_eq!(map.node_chunks(1), &[3, 4]);
        assert_eq!(map.node_chunks(2), &[5]);
        assert_eq!(map.locate(3).unwrap(), ChunkId::new(1, 0));
        assert_eq!(map.locate(9), Err(PlacementError::Unplaced(9)));
        assert_eq!(map.steps()[1].context, [3].into_iter().collect());
    }

    #[test]
    fn single_small_group_on_first_node() {
        let map = assign(&[group(0, &[7, 8])], 3, 4).unwrap();
        assert_eq!(map.node_chunks(0), &[7, 8]);
        assert!(map.node_chunks(1).is_empty());
    }

    #[test]
    fn exact_fit_one_group_per_node() {
        let groups = vec![group(0, &[0, 1]), group(1, &[2, 3]), group(2, &[4, 5])];
        let map = assign(&groups, 3, 2).unwrap();
        for n in 0..3 {
            assert_eq!(map.node_chunks(n), &[2 * n, 2 * n + 1]);
        }
    }

    #[test]
    fn overlap_picks_group_out_of_order() {
        // node 1 holds chunk 9 after the first group spills; group 2 shares it
        let groups = vec![group(0, &[0, 1, 9]), group(1, &[3, 4]), group(2, &[9, 5])];
        let map = assign(&groups, 4, 2).unwrap();
        let order: Vec<usize> = map.steps().iter().map(|s| s.group).collect();
        assert_eq!(order, vec![0, 2, 1]);
        assert_eq!(map.node_chunks(1), &[9, 5]);
    }

    #[test]
    fn capacity_exceeded() {
        let err = assign(&[group(0, &[0, 1, 2, 3, 4])], 2, 2).unwrap_err();
        assert_eq!(
            err,
            PlacementError::CapacityExceeded {
                chunks: 5,
                nodes: 2,
                alpha: 2
            }
        );
    }

    #[test]
    fn fill_and_round_trip() {
        let mut map = assign(&[group(0, &[1, 2, 3]), group(1, &[3, 4, 5])], 3, 2).unwrap();
        map.fill_remaining(6).unwrap();
        assert_eq!(map.locate(0).unwrap(), ChunkId::new(2, 1));
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let back = PlacementMap::read_csv(buf.as_slice()).unwrap();
        for c in 0..6 {
            assert_eq!(back.locate(c), map.locate(c));
        }
        assert!(PlacementMap::read_csv("junk".as_bytes()).is_err());
    }
}
