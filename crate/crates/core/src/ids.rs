use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Unique id the coordinator attaches to every request it sends to nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Chunk `slot` (0-based, `< alpha`) on storage node `node` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkId {
    pub node: usize,
    pub slot: usize,
}

impl ChunkId {
    pub fn new(node: usize, slot: usize) -> Self {
        Self { node, slot }
    }

    pub fn linear(&self, alpha: usize) -> usize {
        self.node * alpha + self.slot
    }

    pub fn from_linear(index: usize, alpha: usize) -> Self {
        Self {
            node: index / alpha,
            slot: index % alpha,
        }
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.node, self.slot)
    }
}

/// The three request types a client can issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
    Repair,
}

impl AccessKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AccessKind::Read => "read",
            AccessKind::Write => "write",
            AccessKind::Repair => "repair",
        }
    }

    /// Reads and repairs both take shared locks.
    pub fn is_shared(&self) -> bool {
        !matches!(self, AccessKind::Write)
    }
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccessKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read" => Ok(AccessKind::Read),
            "write" => Ok(AccessKind::Write),
            "repair" => Ok(AccessKind::Repair),
            other => Err(format!("unknown request kind `{other}`")),
        }
    }
}
