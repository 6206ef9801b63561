//! Node topology, hop distances and the write-distance table used to steer
//! reads away from nodes that are being written.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("topology needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) is a self loop or names an unknown node")]
    BadEdge(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("topology is not connected")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum TopologySpec {
    Path,
    Ring,
    Edges { edges: Vec<(usize, usize)> },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Path,
    Ring,
    Graph,
}

/// Undirected, connected, simple graph over nodes `0..n` with all-pairs hop
/// counts precomputed.
#[derive(Debug, Clone)]
pub struct Topology {
    shape: Shape,
    adjacency: Vec<Vec<usize>>,
    hops: Vec<Vec<u32>>,
}

impl Topology {
    pub fn path(n: usize) -> Result<Self, TopologyError> {
        let edges = (1..n).map(|i| (i - 1, i)).collect::<Vec<_>>();
        Self::build(n, &edges, Shape::Path)
    }

    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        let mut edges = (1..n).map(|i| (i - 1, i)).collect::<Vec<_>>();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::build(n, &edges, Shape::Ring)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        Self::build(n, edges, Shape::Graph)
    }

    pub fn from_spec(n: usize, spec: &TopologySpec) -> Result<Self, TopologyError> {
        match spec {
            TopologySpec::Path => Self::path(n),
            TopologySpec::Ring => Self::ring(n),
            TopologySpec::Edges { edges } => Self::from_edges(n, edges),
        }
    }

    fn build(n: usize, edges: &[(usize, usize)], shape: Shape) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(TopologyError::BadEdge(a, b));
            }
            if adjacency[a].contains(&b) {
                return Err(TopologyError::DuplicateEdge(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let hops = (0..n).map(|s| bfs(&adjacency, s)).collect::<Vec<_>>();
        if hops[0].iter().any(|&h| h == u32::MAX) {
            return Err(TopologyError::Disconnected);
        }
        Ok(Self {
            shape,
            adjacency,
            hops,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adjacency.iter().enumerate() {
            out.extend(nbrs.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn hop_distance(&self, a: usize, b: usize) -> u32 {
        self.hops[a][b]
    }

    /// `k` mutually adjacent nodes starting at a random position: a window on
    /// a path or ring, a breadth-first ball on anything else.
    pub fn random_window<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let n = self.len();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        match self.shape {
            Shape::Path => {
                let start = rng.random_range(0..=n - k);
                (start..start + k).collect()
            }
            Shape::Ring => {
                let start = rng.random_range(0..n);
                (0..k).map(|i| (start + i) % n).collect()
            }
            Shape::Graph => {
                let start = rng.random_range(0..n);
                let mut seen = vec![false; n];
                let mut order = Vec::with_capacity(k);
                let mut queue = VecDeque::from([start]);
                seen[start] = true;
                while let Some(v) = queue.pop_front() {
                    order.push(v);
                    if order.len() == k {
                        break;
                    }
                    for &u in &self.adjacency[v] {
                        if !seen[u] {
                            seen[u] = true;
                            queue.push_back(u);
                        }
                    }
                }
                order
            }
        }
    }
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v] {
            if dist[u] == u32::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Sum of hop distances from `v` to every node in `writes`.
pub fn write_distance(topology: &Topology, writes: &BTreeSet<usize>, v: usize) -> u64 {
    writes
        .iter()
        .map(|&u| u64::from(topology.hop_distance(v, u)))
        .sum()
}

/// Write distance of every node with respect to the set of nodes that hold
/// at least one write lock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteDistanceTable {
    writers: BTreeSet<usize>,
    values: Vec<u64>,
}

impl WriteDistanceTable {
    pub fn new(nodes: usize) -> Self {
        Self {
            writers: BTreeSet::new(),
            values: vec![0; nodes],
        }
    }

    pub fn compute(topology: &Topology, writers: BTreeSet<usize>) -> Self {
        let values = (0..topology.len())
            .map(|v| write_distance(topology, &writers, v))
            .collect();
        Self { writers, values }
    }

    /// Recomputes the table for a new writer set.
    pub fn refresh(&mut self, topology: &Topology, writers: BTreeSet<usize>) {
        if writers != self.writers {
            *self = Self::compute(topology, writers);
        }
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn get(&self, node: usize) -> u64 {
        self.values[node]
    }

    pub fn writers(&self) -> &BTreeSet<usize> {
        &self.writers
    }

    pub fn writes_active(&self) -> bool {
        !self.writers.is_empty()
    }

    /// Nodes by descending write distance, ties by ascending index.
    pub fn by_distance(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = (0..self.values.len()).collect();
        nodes.sort_by(|&a, &b| self.values[b].cmp(&self.values[a]).then(a.cmp(&b)));
        nodes
    }
}

/// Every node in the order reads should contact them. With writes active
/// this is [`WriteDistanceTable::by_distance`]; otherwise a random adjacent
/// window of `k` nodes comes first and the rest follow by index.
pub fn read_preference<R: Rng + ?Sized>(
    topology: &Topology,
    wdt: &WriteDistanceTable,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    if wdt.writes_active() {
        return wdt.by_distance();
    }
    let mut order = topology.random_window(k, rng);
    let mut used = vec![false; topology.len()];
    for &v in &order {
        used[v] = true;
    }
    order.extend((0..topology.len()).filter(|&v| !used[v]));
    order
}

pub fn pick_read_nodes<R: Rng + ?Sized>(
    topology: &Topology,
    wdt: &WriteDistanceTable,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut order = read_preference(topology, wdt, k, rng);
    order.truncate(k);
    order
}
