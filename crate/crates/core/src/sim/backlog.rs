use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run, SimConfig, SimError};

/// Histogram of the remaining backlog at each grid time, over independent
/// replications that start with `n0` queued writes on one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct BacklogResult {
    pub n0: usize,
    pub mu: f64,
    pub samples: usize,
    pub grid: Vec<f64>,
    /// `counts[i][m]`: replications with `m` requests left at `grid[i]`.
    pub counts: Vec<Vec<u64>>,
}

impl BacklogResult {
    pub fn empirical_pmf(&self, i: usize) -> Vec<f64> {
        self.counts[i].iter().map(|&c| c as f64 / self.samples as f64).collect()
    }
}

pub fn backlog_experiment(n0: usize, mu: f64, grid: &[f64], samples: usize, seed: u64) -> Result<BacklogResult, SimError> {
    if samples == 0 {
        return Err(SimError::Config("need at least one replication".into()));
    }
    if grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(SimError::Config("grid times must be finite and non-negative".into()));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![vec![0u64; n0 + 1]; grid.len()];
    for _ in 0..samples {
        let mut cfg = SimConfig::mm1(0.0, mu, 0.0, seeder.random());
        cfg.workload.backlog_writes = n0;
        cfg.slot = super::SlotPolicy::Count(n0.max(1));
        let out = run(&cfg)?;
        for (i, &t) in grid.iter().enumerate() {
            let done = out.completion_times.iter().filter(|&&c| c <= t).count();
            counts[i][n0 - done] += 1;
        }
    }
    Ok(BacklogResult {
        n0,
        mu,
        samples,
        grid: grid.to_vec(),
        counts,
    })
}

pub const FIGURE5_SCHEMA: &str = "#schema=regen-quorum-figure5/1";

/// Analytical and empirical backlog curves on a uniform time grid.
///
/// Per backlog size `n0` there are three columns: the closed-form
/// probability that every request has completed, its empirical estimate, and
/// the empirical probability that none has completed yet (which tracks
/// `e^{-mu t}` for every `n0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Figure5Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub samples: usize,
}

impl Figure5Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{FIGURE5_SCHEMA}")?;
        writeln!(out, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(f64::to_string).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn figure5_table(
    mu: f64,
    t_max: f64,
    steps: usize,
    n0s: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Figure5Table, SimError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(SimError::Config("mu must be positive".into()));
    }
    if !(t_max > 0.0 && t_max.is_finite()) || steps == 0 {
        return Err(SimError::Config("grid needs t_max > 0 and at least one step".into()));
    }
    if n0s.is_empty() || n0s.contains(&0) {
        return Err(SimError::Config("backlog sizes must be positive".into()));
    }
    let grid: Vec<f64> = (0..=steps).map(|i| t_max * i as f64 / steps as f64).collect();
    let mut columns = vec!["t".to_string(), "analytical".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![grid.clone(), grid.iter().map(|t| (-mu * t).exp()).collect()];
    for (j, &n0) in n0s.iter().enumerate() {
        let res = backlog_experiment(n0, mu, &grid, samples, seed.wrapping_add(j as u64))?;
        let model = grid
            .iter()
            .map(|&t| crate::analysis::completion_pmf(n0, mu, t, 0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SimError::Config(e.to_string()))?;
        let done = (0..grid.len()).map(|i| res.empirical_pmf(i)[0]).collect();
        let none = (0..grid.len()).map(|i| res.empirical_pmf(i)[n0]).collect();
        columns.push(format!("p0_n{n0}"));
        columns.push(format!("p0_empirical_n{n0}"));
        columns.push(format!("none_done_empirical_n{n0}"));
        cols.push(model);
        cols.push(done);
        cols.push(none);
    }
    let rows = (0..grid.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    Ok(Figure5Table { columns, rows, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backlog_starts_full_and_drains() {
        let r = backlog_experiment(5, 2.0, &[0.0, 1000.0], 200, 1).unwrap();
        assert_eq!(r.counts[0][5], 200);
        assert_eq!(r.counts[1][0], 200);
        assert_eq!(r.empirical_pmf(0)[5], 1.0);
    }

    #[test]
    fn figure5_first_row_and_shape() {
        let f = figure5_table(10.0, 1.0, 10, &[1, 3], 100, 2).unwrap();
        assert_eq!(f.rows.len(), 11);
        assert_eq!(f.columns.len(), 2 + 2 * 3);
        let first = &f.rows[0];
        assert_eq!(first[0], 0.0);
        assert_eq!(first[1], 1.0);
        assert_eq!(f.column("none_done_empirical_n3").unwrap()[0], 1.0);
        assert_eq!(f.column("p0_empirical_n1").unwrap()[0], 0.0);
        assert!(figure5_table(0.0, 1.0, 10, &[1], 10, 1).is_err());
        assert!(figure5_table(1.0, 1.0, 0, &[1], 10, 1).is_err());
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(FIGURE5_SCHEMA));
    }

    #[test]
    fn mean_remaining_tracks_service_rate() {
        // with n0 large the departures form a Poisson process of rate mu
        let r = backlog_experiment(50, 4.0, &[2.0], 2000, 3).unwrap();
        let mean: f64 = r.empirical_pmf(0).iter().enumerate().map(|(m, p)| m as f64 * p).sum();
        assert!((mean - 42.0).abs() < 0.3, "{mean}");
    }
}
