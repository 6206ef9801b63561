//! Closed-form availability and queueing formulas, and comparison of
//! empirical distributions against them.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unstable queue: lambda {lambda} >= mu {mu}")]
    UnstableQueue { lambda: f64, mu: f64 },
}

fn check_prob(name: &str, p: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AnalysisError::Domain(format!("{name} = {p} is not a probability")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<(), AnalysisError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::Domain(format!("{name} = {v} must be a finite non-negative number")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityParams {
    pub nodes: usize,
    pub k: usize,
    pub d: usize,
    pub p_r: f64,
    /// Carried for completeness; no formula consumes it.
    pub p_w: f64,
}

impl AvailabilityParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        check_prob("p_r", self.p_r)?;
        check_prob("p_w", self.p_w)
    }
}

/// A probability-like value that may fall outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub exceeds_one: bool,
}

impl Flagged {
    fn new(value: f64) -> Self {
        Self {
            value,
            exceeds_one: value > 1.0 + 1e-12,
        }
    }
}

/// Binomial coefficient. Exact integer arithmetic for `n <= 64`, log-gamma
/// style summation above that.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n <= 64 {
        let mut c: u128 = 1;
        for i in 0..k as u128 {
            c = c * (n as u128 - i) / (i + 1);
        }
        c as f64
    } else {
        (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp()
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn binom_term(n: usize, i: usize, p: f64) -> f64 {
    binomial(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
}

/// Σ_{i=k}^{N} C(N,i) C(i,k) p^i (1-p)^{N-i}, evaluated as written.
pub fn prob_download_sum(a: &AvailabilityParams) -> Result<Flagged, AnalysisError> {
    a.validate()?;
    let v = (a.k..=a.nodes)
        .map(|i| binomial(i, a.k) * binom_term(a.nodes, i, a.p_r))
        .sum();
    Ok(Flagged::new(v))
}

/// Σ_{i=d}^{N-1} C(N,i) C(i,d) p^i (1-p)^{N-i}, evaluated as written.
pub fn prob_repair_sum(a: &AvailabilityParams) -> Result<Flagged, AnalysisError> {
    a.validate()?;
    let v = (a.d..a.nodes)
        .map(|i| binomial(i, a.d) * binom_term(a.nodes, i, a.p_r))
        .sum();
    Ok(Flagged::new(v))
}

/// Probability that at least `m` of `n` independent nodes are available.
pub fn prob_at_least(n: usize, m: usize, p: f64) -> Result<f64, AnalysisError> {
    check_prob("p", p)?;
    if m > n {
        return Err(AnalysisError::Domain(format!("m = {m} exceeds N = {n}")));
    }
    if m == 0 {
        return Ok(1.0);
    }
    let v: f64 = (m..=n).map(|i| binom_term(n, i, p)).sum();
    Ok(v.clamp(0.0, 1.0))
}

pub fn poisson_pmf(rate: f64, t: f64, m: usize) -> Result<f64, AnalysisError> {
    check_nonneg("rate", rate)?;
    check_nonneg("t", t)?;
    Ok(poisson(rate * t, m))
}

fn poisson(mean: f64, m: usize) -> f64 {
    if mean == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    (m as f64 * mean.ln() - mean - ln_factorial(m)).exp()
}

/// Joint probability of `l` writes in `[0, T]` and `m` reads in `[0, t]`.
pub fn joint_pmf(lambda_w: f64, big_t: f64, lambda_r: f64, t: f64, l: usize, m: usize) -> Result<f64, AnalysisError> {
    Ok(poisson_pmf(lambda_w, big_t, l)? * poisson_pmf(lambda_r, t, m)?)
}

pub fn expected_requests(lambda_w: f64, big_t: f64, lambda_r: f64, t: f64) -> Result<f64, AnalysisError> {
    for (n, v) in [("lambda_w", lambda_w), ("T", big_t), ("lambda_r", lambda_r), ("t", t)] {
        check_nonneg(n, v)?;
    }
    Ok(lambda_w * big_t * lambda_r * t)
}

/// Probability that `m` of an initial backlog of `n0` requests remain at
/// time `t` when each completes at rate `mu` one after another.
pub fn completion_pmf(n0: usize, mu: f64, t: f64, m: usize) -> Result<f64, AnalysisError> {
    check_nonneg("mu", mu)?;
    check_nonneg("t", t)?;
    if m > n0 {
        return Err(AnalysisError::Domain(format!("m = {m} exceeds N0 = {n0}")));
    }
    let mean = mu * t;
    if m >= 1 {
        return Ok(poisson(mean, n0 - m));
    }
    // m = 0 is the upper Poisson tail from n0; summing the tail directly
    // avoids cancellation in 1 - Σ.
    if mean < n0 as f64 {
        let mut sum = 0.0;
        let mut j = n0;
        loop {
            let term = poisson(mean, j);
            sum += term;
            if term <= sum * 1e-18 || term == 0.0 {
                break;
            }
            j += 1;
        }
        Ok(sum)
    } else {
        let below: f64 = (0..n0).map(|j| poisson(mean, j)).sum();
        Ok((1.0 - below).max(0.0))
    }
}

/// `e^{-mu t}`.
pub fn completion_zero_limit(mu: f64, t: f64) -> Result<f64, AnalysisError> {
    check_nonneg("mu", mu)?;
    check_nonneg("t", t)?;
    Ok((-mu * t).exp())
}

/// Steady-state probability of `n` requests in an M/M/1 system.
pub fn mm1_pn(lambda: f64, mu: f64, n: usize) -> Result<f64, AnalysisError> {
    check_nonneg("lambda", lambda)?;
    check_nonneg("mu", mu)?;
    if lambda >= mu {
        return Err(AnalysisError::UnstableQueue { lambda, mu });
    }
    let rho = lambda / mu;
    Ok(rho.powi(n as i32) * (1.0 - rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub total_variation: f64,
    /// `(empirical - expected) / sd` per point; zero where the binomial
    /// standard deviation vanishes and the values agree.
    pub z_scores: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Compares `empirical` against `expected` point by point. `samples` is the
/// number of independent observations behind each empirical value.
pub fn compare_empirical(empirical: &[f64], expected: &[f64], samples: f64) -> DivergenceReport {
    let n = empirical.len().min(expected.len());
    let mut tv = 0.0;
    let mut max_abs = 0.0f64;
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let diff = empirical[i] - expected[i];
        tv += diff.abs();
        max_abs = max_abs.max(diff.abs());
        let sd = (expected[i] * (1.0 - expected[i]) / samples).sqrt();
        z.push(if sd > 0.0 {
            diff / sd
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        });
    }
    DivergenceReport {
        total_variation: tv / 2.0,
        z_scores: z,
        max_abs_diff: max_abs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn avail(nodes: usize, k: usize, d: usize, p: f64) -> AvailabilityParams {
        AvailabilityParams {
            nodes,
            k,
            d,
            p_r: p,
            p_w: 0.0,
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Pascal's triangle, independent of `binomial`.
    fn pascal(n: usize) -> Vec<Vec<f64>> {
        let mut rows = vec![vec![1.0]];
        for i in 1..=n {
            let prev = &rows[i - 1];
            let mut row = vec![1.0; i + 1];
            for j in 1..i {
                row[j] = prev[j - 1] + prev[j];
            }
            rows.push(row);
        }
        rows
    }

    #[test]
    fn binomial_matches_pascal() {
        let p = pascal(70);
        for n in 0..=70 {
            for k in 0..=n {
                let rel = (binomial(n, k) - p[n][k]).abs() / p[n][k];
                assert!(rel < 1e-9, "C({n},{k})");
            }
        }
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn download_examples() {
        assert!(close(prob_download_sum(&avail(2, 2, 1, 1.0)).unwrap().value, 1.0, 1e-15));
        assert_eq!(prob_download_sum(&avail(4, 2, 1, 0.0)).unwrap().value, 0.0);
        let f = prob_download_sum(&avail(4, 2, 1, 0.5)).unwrap();
        assert!(close(f.value, 24.0 / 16.0, 1e-15));
        assert!(f.exceeds_one);
        assert_eq!(prob_download_sum(&avail(1, 2, 1, 0.5)).unwrap().value, 0.0);
    }

    #[test]
    fn repair_examples() {
        assert_eq!(prob_repair_sum(&avail(4, 1, 2, 0.0)).unwrap().value, 0.0);
        assert!(close(prob_repair_sum(&avail(2, 1, 1, 0.5)).unwrap().value, 0.5, 1e-15));
        assert_eq!(prob_repair_sum(&avail(4, 1, 3, 1.0)).unwrap().value, 0.0);
        assert!(prob_repair_sum(&avail(4, 1, 3, 1.5)).is_err());
    }

    #[test]
    fn at_least_examples() {
        assert!(close(prob_at_least(4, 2, 0.5).unwrap(), 0.6875, 1e-15));
        assert_eq!(prob_at_least(5, 0, 0.3).unwrap(), 1.0);
        assert!(close(prob_at_least(5, 3, 1.0).unwrap(), 1.0, 1e-15));
        assert!(prob_at_least(3, 4, 0.5).is_err());
    }

    #[test]
    fn poisson_examples() {
        assert!(close(poisson_pmf(10.0, 0.1, 0).unwrap(), (-1.0f64).exp(), 1e-15));
        assert_eq!(poisson_pmf(3.0, 0.0, 0).unwrap(), 1.0);
        assert_eq!(poisson_pmf(3.0, 0.0, 2).unwrap(), 0.0);
        assert!(close(poisson_pmf(1.0, 1.0, 1).unwrap(), (-1.0f64).exp(), 1e-15));
        let total: f64 = (0..100).map(|m| poisson_pmf(4.0, 2.0, m).unwrap()).sum();
        assert!(close(total, 1.0, 1e-12));
    }

    #[test]
    fn joint_examples() {
        assert!(close(joint_pmf(2.0, 1.0, 3.0, 1.0, 0, 0).unwrap(), (-5.0f64).exp(), 1e-15));
        assert_eq!(joint_pmf(2.0, 0.0, 3.0, 1.0, 2, 0).unwrap(), 0.0);
        let j = joint_pmf(2.0, 1.5, 3.0, 0.5, 3, 2).unwrap();
        let f = poisson_pmf(2.0, 1.5, 3).unwrap() * poisson_pmf(3.0, 0.5, 2).unwrap();
        assert_eq!(j, f);
        let mut total = 0.0;
        let mut mean = 0.0;
        for l in 0..60 {
            for m in 0..60 {
                let p = joint_pmf(2.0, 1.0, 3.0, 1.0, l, m).unwrap();
                total += p;
                mean += (l * m) as f64 * p;
            }
        }
        assert!(close(total, 1.0, 1e-12));
        assert!(close(mean, expected_requests(2.0, 1.0, 3.0, 1.0).unwrap(), 1e-9));
        assert_eq!(expected_requests(2.0, 1.0, 3.0, 1.0).unwrap(), 6.0);
        assert_eq!(expected_requests(0.0, 1.0, 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn completion_examples() {
        let e1 = (-1.0f64).exp();
        assert!(close(completion_pmf(1, 10.0, 0.1, 1).unwrap(), e1, 1e-15));
        assert!(close(completion_pmf(1, 10.0, 0.1, 0).unwrap(), 1.0 - e1, 1e-15));
        assert_eq!(completion_pmf(3, 10.0, 0.0, 3).unwrap(), 1.0);
        assert_eq!(completion_pmf(3, 10.0, 0.0, 0).unwrap(), 0.0);
        let v: Vec<f64> = (0..=2).rev().map(|m| completion_pmf(2, 10.0, 0.1, m).unwrap()).collect();
        assert!(close(v[0], e1, 1e-15) && close(v[1], e1, 1e-15));
        assert!(close(v[2], 1.0 - 2.0 * e1, 1e-15));
        assert!(completion_pmf(2, 10.0, 0.1, 3).is_err());
    }

    #[test]
    fn zero_limit_examples() {
        assert!(close(completion_zero_limit(10.0, 0.2).unwrap(), 0.135335283236612, 1e-12));
        assert_eq!(completion_zero_limit(10.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn no_completions_yet_equals_zero_limit() {
        for n0 in [1, 5, 200] {
            for t in [0.0, 0.05, 0.1, 0.5] {
                let stay = completion_pmf(n0, 10.0, t, n0).unwrap();
                assert!(close(stay, completion_zero_limit(10.0, t).unwrap(), 1e-15));
            }
        }
        // the all-done probability itself vanishes for a large backlog
        assert!(completion_pmf(200, 10.0, 0.1, 0).unwrap() < 1e-100);
    }

    #[test]
    fn mm1_examples() {
        assert_eq!(mm1_pn(1.0, 2.0, 0).unwrap(), 0.5);
        assert_eq!(mm1_pn(1.0, 2.0, 1).unwrap(), 0.25);
        assert_eq!(mm1_pn(1.0, 2.0, 2).unwrap(), 0.125);
        assert!(matches!(mm1_pn(2.0, 2.0, 0), Err(AnalysisError::UnstableQueue { .. })));
        let total: f64 = (0..200).map(|n| mm1_pn(1.0, 2.0, n).unwrap()).sum();
        assert!(close(total, 1.0, 1e-12));
    }

    #[test]
    fn divergence_of_identical_is_zero() {
        let p = [0.5, 0.25, 0.125];
        let r = compare_empirical(&p, &p, 1000.0);
        assert_eq!(r.total_variation, 0.0);
        assert!(r.z_scores.iter().all(|&z| z == 0.0));
        let r = compare_empirical(&[1.0, 0.0], &[0.5, 0.5], 100.0);
        assert_eq!(r.total_variation, 0.5);
        assert!(close(r.z_scores[0], 10.0, 1e-12));
    }

    proptest! {
        #[test]
        fn completion_pmf_sums_to_one(n0 in 1usize..60, mu in 0.1f64..20.0, t in 0.0f64..3.0) {
            let total: f64 = (0..=n0).map(|m| completion_pmf(n0, mu, t, m).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn all_done_is_monotone_in_t(n0 in 1usize..40, mu in 0.1f64..20.0, t in 0.0f64..2.0, dt in 0.0f64..1.0) {
            let a = completion_pmf(n0, mu, t, 0).unwrap();
            let b = completion_pmf(n0, mu, t + dt, 0).unwrap();
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn at_least_matches_enumeration(n in 1usize..=10, m in 0usize..=10, p in 0.0f64..=1.0) {
            prop_assume!(m <= n);
            let mut total = 0.0;
            for mask in 0u32..(1 << n) {
                let up = mask.count_ones() as usize;
                if up >= m {
                    total += p.powi(up as i32) * (1.0 - p).powi((n - up) as i32);
                }
            }
            prop_assert!((prob_at_least(n, m, p).unwrap() - total).abs() < 1e-12);
        }
    }
}
