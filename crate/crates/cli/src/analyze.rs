use std::collections::BTreeMap;

use regen_quorum::analysis::{
    completion_pmf, completion_zero_limit, expected_requests, joint_pmf, mm1_pn, poisson_pmf, prob_at_least,
    prob_download_sum, prob_repair_sum, AnalysisError, AvailabilityParams,
};

pub type Params = BTreeMap<String, f64>;

/// Result of one evaluation; `flagged` marks a "probability" above one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub flagged: bool,
}

#[derive(Debug)]
pub enum EvalError {
    Param(String),
    Analysis(AnalysisError),
}

impl From<AnalysisError> for EvalError {
    fn from(e: AnalysisError) -> Self {
        EvalError::Analysis(e)
    }
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::Param(m) => f.write_str(m),
            EvalError::Analysis(e) => write!(f, "{e}"),
        }
    }
}

pub struct Formula {
    pub name: &'static str,
    pub params: &'static [&'static str],
    pub about: &'static str,
    eval: fn(&Params) -> Result<Evaluation, EvalError>,
}

impl Formula {
    pub fn evaluate(&self, p: &Params) -> Result<Evaluation, EvalError> {
        if let Some(extra) = p.keys().find(|k| !self.params.contains(&k.as_str())) {
            return Err(EvalError::Param(format!(
                "`{}` takes no parameter `{extra}` (expects {})",
                self.name,
                self.params.join(", ")
            )));
        }
        (self.eval)(p)
    }
}

fn real(p: &Params, name: &str) -> Result<f64, EvalError> {
    p.get(name)
        .copied()
        .ok_or_else(|| EvalError::Param(format!("missing parameter `{name}`")))
}

fn count(p: &Params, name: &str) -> Result<usize, EvalError> {
    let v = real(p, name)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(EvalError::Param(format!("`{name}` must be a non-negative integer")));
    }
    Ok(v as usize)
}

fn plain(value: f64) -> Evaluation {
    Evaluation { value, flagged: false }
}

fn availability(p: &Params, quorum: &str) -> Result<AvailabilityParams, EvalError> {
    let q = count(p, quorum)?;
    Ok(AvailabilityParams {
        nodes: count(p, "N")?,
        k: q,
        d: q,
        p_r: real(p, "p")?,
        p_w: 0.0,
    })
}

pub const FORMULAS: &[Formula] = &[
    Formula {
        name: "download",
        params: &["N", "k", "p"],
        about: "literal download availability sum (may exceed 1)",
        eval: |p| {
            let f = prob_download_sum(&availability(p, "k")?)?;
            Ok(Evaluation {
                value: f.value,
                flagged: f.exceeds_one,
            })
        },
    },
    Formula {
        name: "repair",
        params: &["N", "d", "p"],
        about: "literal repair availability sum (may exceed 1)",
        eval: |p| {
            let f = prob_repair_sum(&availability(p, "d")?)?;
            Ok(Evaluation {
                value: f.value,
                flagged: f.exceeds_one,
            })
        },
    },
    Formula {
        name: "at_least",
        params: &["N", "m", "p"],
        about: "P(at least m of N nodes available)",
        eval: |p| Ok(plain(prob_at_least(count(p, "N")?, count(p, "m")?, real(p, "p")?)?)),
    },
    Formula {
        name: "poisson",
        params: &["rate", "t", "m"],
        about: "P(m arrivals in time t)",
        eval: |p| Ok(plain(poisson_pmf(real(p, "rate")?, real(p, "t")?, count(p, "m")?)?)),
    },
    Formula {
        name: "joint",
        params: &["lambda_w", "T", "lambda_r", "t", "l", "m"],
        about: "P(l writes in T and m reads in t)",
        eval: |p| {
            Ok(plain(joint_pmf(
                real(p, "lambda_w")?,
                real(p, "T")?,
                real(p, "lambda_r")?,
                real(p, "t")?,
                count(p, "l")?,
                count(p, "m")?,
            )?))
        },
    },
    Formula {
        name: "expected",
        params: &["lambda_w", "T", "lambda_r", "t"],
        about: "expected product of write and read counts",
        eval: |p| {
            Ok(plain(expected_requests(
                real(p, "lambda_w")?,
                real(p, "T")?,
                real(p, "lambda_r")?,
                real(p, "t")?,
            )?))
        },
    },
    Formula {
        name: "completion",
        params: &["n0", "mu", "t", "m"],
        about: "P(m of an n0 backlog remain at t)",
        eval: |p| Ok(plain(completion_pmf(count(p, "n0")?, real(p, "mu")?, real(p, "t")?, count(p, "m")?)?)),
    },
    Formula {
        name: "completion_limit",
        params: &["mu", "t"],
        about: "e^(-mu t)",
        eval: |p| Ok(plain(completion_zero_limit(real(p, "mu")?, real(p, "t")?)?)),
    },
    Formula {
        name: "mm1_pn",
        params: &["lambda", "mu", "n"],
        about: "M/M/1 steady-state P(n in system)",
        eval: |p| Ok(plain(mm1_pn(real(p, "lambda")?, real(p, "mu")?, count(p, "n")?)?)),
    },
];

pub fn lookup(name: &str) -> Option<&'static Formula> {
    FORMULAS.iter().find(|f| f.name == name)
}

pub fn parse_params(args: &[String]) -> Result<Params, String> {
    let mut out = Params::new();
    for a in args {
        let (k, v) = a.split_once('=').ok_or_else(|| format!("expected name=value, got `{a}`"))?;
        let v: f64 = v.parse().map_err(|_| format!("`{k}` is not a number: `{v}`"))?;
        if out.insert(k.to_string(), v).is_some() {
            return Err(format!("`{k}` given twice"));
        }
    }
    Ok(out)
}

/// `name=start:end:points` with at least two points.
pub fn parse_sweep(s: &str) -> Result<(String, Vec<f64>), String> {
    let bad = || format!("sweep must look like name=start:end:points, got `{s}`");
    let (name, range) = s.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.parse().map_err(|_| bad())?;
    let b: f64 = b.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n < 2 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    let step = (b - a) / (n - 1) as f64;
    let grid = (0..n).map(|i| if i + 1 == n { b } else { a + step * i as f64 }).collect();
    Ok((name.to_string(), grid))
}
