//! Regenerating-code parameters, update footprints and quorum sizes.
//!
//! The code itself is modelled abstractly: a file is split into `k` native
//! chunks, encoded into `nodes * alpha` code chunks, and an update to native
//! chunk `u` rewrites the code chunks listed in row `u` of the
//! [`FootprintMatrix`]. No finite-field arithmetic happens anywhere in the
//! crate; the coordination protocol only needs to know which chunks change.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FOOTPRINT_SCHEMA: &str = "#schema=regen-quorum-footprint/1";

#[derive(Debug, Error, PartialEq)]
pub enum CodeError {
    #[error("parameter violation: {0}")]
    ParamViolation(String),
    #[error("native chunk index {index} out of range (k = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("invalid footprint: {0}")]
    InvalidFootprint(String),
    #[error("footprint csv: {0}")]
    Csv(String),
}

/// Parameters of an `(n, k, d, alpha, beta)` regenerating code stored on
/// `nodes` storage nodes, where one file update rewrites `q` code chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub nodes: usize,
    pub code_chunks: usize,
    pub k: usize,
    pub d: usize,
    pub alpha: usize,
    pub beta: usize,
    pub q: usize,
    /// File size in bytes. Carried as metadata only.
    #[serde(default)]
    pub file_size: Option<u64>,
}

impl CodeParams {
    /// Total number of stored code chunks. This is the authoritative chunk
    /// count; `code_chunks` is only validated.
    pub fn total_chunks(&self) -> usize {
        self.nodes * self.alpha
    }
}

pub fn validate_params(p: CodeParams) -> Result<CodeParams, CodeError> {
    let fail = |s: &str| Err(CodeError::ParamViolation(s.to_string()));
    if p.k == 0 {
        return fail("0 < k");
    }
    if p.k >= p.code_chunks {
        return fail("k < n");
    }
    if p.d < p.k {
        return fail("k <= d");
    }
    if p.d >= p.nodes {
        return fail("d < N");
    }
    if p.beta == 0 {
        return fail("0 < beta");
    }
    if p.beta > p.alpha {
        return fail("beta <= alpha");
    }
    if p.q == 0 {
        return fail("0 < q");
    }
    if p.q > p.total_chunks() {
        return fail("q <= N*alpha");
    }
    if p.alpha == 1 && p.code_chunks != p.nodes {
        return fail("n = N when alpha = 1");
    }
    Ok(p)
}

/// Read, write and repair quorums, counted in chunk votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumValues {
    pub r: usize,
    pub w: usize,
    pub rep: usize,
}

/// All `alpha` chunks of any `k` nodes for a read, the `q` footprint chunks
/// for a write, and `beta` chunks from each of `d` helpers for a repair.
pub fn quorum_values(p: &CodeParams) -> QuorumValues {
    QuorumValues {
        r: p.k * p.alpha,
        w: p.q,
        rep: p.d * p.beta,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FootprintMode {
    /// Every update rewrites every chunk.
    Dense,
    /// Each row is an independent uniform `q`-subset, drawn from `seed`.
    Uniform { seed: u64 },
    /// Rows supplied by the user.
    Explicit { rows: Vec<Vec<usize>> },
}

/// Row `u` lists the code chunk ids rewritten by an update to native chunk `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FootprintMatrix {
    chunk_count: usize,
    rows: Vec<Vec<usize>>,
}

impl FootprintMatrix {
    pub fn dense(k: usize, chunk_count: usize) -> Self {
        Self {
            chunk_count,
            rows: vec![(0..chunk_count).collect(); k],
        }
    }

    pub fn uniform(k: usize, chunk_count: usize, q: usize, seed: u64) -> Result<Self, CodeError> {
        if q == 0 || q > chunk_count {
            return Err(CodeError::InvalidFootprint(format!(
                "row size {q} outside 1..={chunk_count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..k)
            .map(|_| {
                let mut row = index::sample(&mut rng, chunk_count, q).into_vec();
                row.sort_unstable();
                row
            })
            .collect();
        Ok(Self { chunk_count, rows })
    }

    pub fn explicit(chunk_count: usize, rows: Vec<Vec<usize>>) -> Result<Self, CodeError> {
        if rows.is_empty() {
            return Err(CodeError::InvalidFootprint("no rows".into()));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (u, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(CodeError::InvalidFootprint(format!("row {u} is empty")));
            }
            if let Some(&c) = row.iter().find(|&&c| c >= chunk_count) {
                return Err(CodeError::InvalidFootprint(format!(
                    "row {u} names chunk {c}, only {chunk_count} chunks exist"
                )));
            }
            clean.push(row);
        }
        Ok(Self {
            chunk_count,
            rows: clean,
        })
    }

    /// Builds the matrix for `params` according to `mode`. Explicit rows must
    /// supply exactly `k` rows.
    pub fn from_mode(params: &CodeParams, mode: &FootprintMode) -> Result<Self, CodeError> {
        let total = params.total_chunks();
        let m = match mode {
            FootprintMode::Dense => Self::dense(params.k, total),
            FootprintMode::Uniform { seed } => Self::uniform(params.k, total, params.q, *seed)?,
            FootprintMode::Explicit { rows } => Self::explicit(total, rows.clone())?,
        };
        if m.rows.len() != params.k {
            return Err(CodeError::InvalidFootprint(format!(
                "{} rows given, k = {}",
                m.rows.len(),
                params.k
            )));
        }
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_count
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn is_dense(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.chunk_count)
    }

    pub fn footprint(&self, native_idx: usize) -> Result<&[usize], CodeError> {
        self.rows
            .get(native_idx)
            .map(Vec::as_slice)
            .ok_or(CodeError::IndexOutOfRange {
                index: native_idx,
                k: self.rows.len(),
            })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{FOOTPRINT_SCHEMA}")?;
        writeln!(out, "chunk_count,{}", self.chunk_count)?;
        writeln!(out, "native,chunks")?;
        for (u, row) in self.rows.iter().enumerate() {
            let ids: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "{u},{}", ids.join(" "))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, CodeError> {
        let mut lines = input.lines();
        let mut next = || -> Result<Option<String>, CodeError> {
            lines
                .next()
                .transpose()
                .map_err(|e| CodeError::Csv(e.to_string()))
        };
        if next()?.as_deref() != Some(FOOTPRINT_SCHEMA) {
            return Err(CodeError::Csv("missing schema header".into()));
        }
        let count_line = next()?.ok_or_else(|| CodeError::Csv("missing chunk_count".into()))?;
        let chunk_count = count_line
            .strip_prefix("chunk_count,")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CodeError::Csv(format!("bad chunk_count line `{count_line}`")))?;
        if next()?.as_deref() != Some("native,chunks") {
            return Err(CodeError::Csv("missing column header".into()));
        }
        let mut rows = Vec::new();
        while let Some(line) = next()? {
            if line.trim().is_empty() {
                continue;
            }
            let (u, ids) = line
                .split_once(',')
                .ok_or_else(|| CodeError::Csv(format!("bad row `{line}`")))?;
            let u: usize = u
                .trim()
                .parse()
                .map_err(|_| CodeError::Csv(format!("bad native index `{u}`")))?;
            if u != rows.len() {
                return Err(CodeError::Csv(format!("row {u} out of order")));
            }
            let row = ids
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| CodeError::Csv(format!("bad chunk id `{s}`"))))
                .collect::<Result<Vec<usize>, _>>()?;
            rows.push(row);
        }
        Self::explicit(chunk_count, rows)
    }
}

/// Outcome of checking the classic weighted-voting constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GiffordReport {
    pub total_votes: usize,
    pub read_write_overlap: bool,
    pub write_write_overlap: bool,
}

impl GiffordReport {
    pub fn satisfied(&self) -> bool {
        self.read_write_overlap && self.write_write_overlap
    }
}

impl fmt::Display for GiffordReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "holds" } else { "violated" };
        write!(
            f,
            "r+w>{}: {}; 2w>{}: {}",
            self.total_votes,
            yn(self.read_write_overlap),
            self.total_votes,
            yn(self.write_write_overlap)
        )
    }
}

/// Informational only: regenerating-code quorums are not required to
/// satisfy these inequalities.
pub fn gifford_check(qv: &QuorumValues, total_votes: usize) -> GiffordReport {
    GiffordReport {
        total_votes,
        read_write_overlap: qv.r + qv.w > total_votes,
        write_write_overlap: 2 * qv.w > total_votes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(nodes: usize, k: usize, d: usize, alpha: usize, beta: usize, q: usize) -> CodeParams {
        CodeParams {
            nodes,
            code_chunks: nodes * alpha,
            k,
            d,
            alpha,
            beta,
            q,
            file_size: None,
        }
    }

    #[test]
    fn nccloud_parameters_validate() {
        let p = params(8, 2, 3, 1, 1, 8);
        assert_eq!(validate_params(p), Ok(p));
        assert_eq!(quorum_values(&p), QuorumValues { r: 2, w: 8, rep: 3 });
    }

    #[test]
    fn degenerate_params_rejected() {
        let mut p = params(8, 2, 3, 1, 1, 8);
        p.k = 0;
        assert!(matches!(validate_params(p), Err(CodeError::ParamViolation(s)) if s == "0 < k"));
        let mut p = params(8, 2, 3, 1, 1, 8);
        p.beta = 2;
        assert!(matches!(validate_params(p), Err(CodeError::ParamViolation(s)) if s == "beta <= alpha"));
        let p = params(8, 2, 8, 1, 1, 8);
        assert!(matches!(validate_params(p), Err(CodeError::ParamViolation(s)) if s == "d < N"));
        let p = params(8, 2, 3, 1, 1, 9);
        assert!(matches!(validate_params(p), Err(CodeError::ParamViolation(s)) if s == "q <= N*alpha"));
        let mut p = params(8, 2, 3, 1, 1, 8);
        p.code_chunks = 10;
        assert!(validate_params(p).is_err());
    }

    #[test]
    fn multi_chunk_quorums() {
        // r = 2 nodes * 2 chunks, w = q, rep = 3 helpers * 1 chunk
        let p = params(6, 2, 3, 2, 1, 3);
        validate_params(p).unwrap();
        assert_eq!(quorum_values(&p), QuorumValues { r: 4, w: 3, rep: 3 });
        let p = params(2, 1, 1, 1, 1, 1);
        validate_params(p).unwrap();
        assert_eq!(quorum_values(&p), QuorumValues { r: 1, w: 1, rep: 1 });
    }

    #[test]
    fn dense_rows_cover_everything() {
        let f = FootprintMatrix::dense(2, 8);
        for u in 0..2 {
            assert_eq!(f.footprint(u).unwrap(), (0..8).collect::<Vec<_>>().as_slice());
        }
        assert!(f.is_dense());
        assert_eq!(
            f.footprint(2),
            Err(CodeError::IndexOutOfRange { index: 2, k: 2 })
        );
    }

    #[test]
    fn uniform_rows_are_seeded() {
        let a = FootprintMatrix::uniform(2, 12, 3, 42).unwrap();
        let b = FootprintMatrix::uniform(2, 12, 3, 42).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            assert_eq!(row.len(), 3);
            assert!(row.windows(2).all(|w| w[0] < w[1]));
        }
        let full = FootprintMatrix::uniform(3, 6, 6, 1).unwrap();
        assert!(full.is_dense());
    }

    #[test]
    fn explicit_rows_validated() {
        assert!(FootprintMatrix::explicit(4, vec![vec![]]).is_err());
        assert!(FootprintMatrix::explicit(4, vec![vec![4]]).is_err());
        let f = FootprintMatrix::explicit(4, vec![vec![3, 1, 1]]).unwrap();
        assert_eq!(f.rows(), &[vec![1, 3]]);
    }

    #[test]
    fn from_mode_checks_row_count() {
        let p = params(4, 2, 2, 1, 1, 2);
        let mode = FootprintMode::Explicit {
            rows: vec![vec![0, 1]],
        };
        assert!(FootprintMatrix::from_mode(&p, &mode).is_err());
    }

    #[test]
    fn footprint_csv_round_trip() {
        let f = FootprintMatrix::uniform(3, 10, 4, 9).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = FootprintMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn gifford_examples() {
        let rep = gifford_check(&QuorumValues { r: 2, w: 8, rep: 3 }, 8);
        assert!(rep.read_write_overlap && rep.write_write_overlap);
        let rep = gifford_check(&QuorumValues { r: 4, w: 3, rep: 3 }, 12);
        assert!(!rep.read_write_overlap && !rep.write_write_overlap);
        assert!(gifford_check(&QuorumValues { r: 1, w: 1, rep: 1 }, 1).satisfied());
    }

    proptest::proptest! {
        #[test]
        fn quorums_bounded_by_chunk_count(
            nodes in 2usize..12, alpha in 1usize..5, kf in 0.0f64..1.0, df in 0.0f64..1.0,
            bf in 0.0f64..1.0, qf in 0.0f64..1.0,
        ) {
            let k = 1 + ((nodes - 2) as f64 * kf) as usize;
            let d = k + ((nodes - 1 - k) as f64 * df) as usize;
            let beta = 1 + ((alpha - 1) as f64 * bf) as usize;
            let q = 1 + ((nodes * alpha - 1) as f64 * qf) as usize;
            let p = params(nodes, k, d, alpha, beta, q);
            proptest::prop_assert!(validate_params(p).is_ok());
            let qv = quorum_values(&p);
            proptest::prop_assert!(qv.r <= p.total_chunks());
            proptest::prop_assert!(qv.w <= p.total_chunks());
            proptest::prop_assert!(qv.rep <= p.total_chunks());
            if alpha == 1 && q == nodes {
                proptest::prop_assert!(FootprintMatrix::dense(k, nodes).is_dense());
                proptest::prop_assert_eq!(qv.w, p.total_chunks());
            }
        }
    }
}
