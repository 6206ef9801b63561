//! TOML scenario files.
//!
//! ```toml
//! seed = 7
//! horizon = 100.0
//! output_dir = "out"
//!
//! [code]
//! nodes = 6
//! code_chunks = 8
//! k = 2
//! d = 3
//! alpha = 2
//! beta = 1
//! q = 3
//!
//! [footprint]
//! mode = "uniform"   # dense | uniform | explicit
//! seed = 11          # uniform only
//! # rows = [[0, 1], [2, 3]]   or   path = "footprint.csv"
//!
//! [scheduler]
//! slot = "count"     # count | window
//! slot_size = 4
//! t0 = 2.0
//!
//! [workload]
//! lambda_r = 2.0
//! lambda_w = 1.0
//! mu_r = 4.0
//! mu_w = 4.0
//!
//! [network]
//! topology = "path"  # path | ring | edges
//! message_delay = 0.01
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::code_model::{CodeParams, FootprintMatrix, FootprintMode};
use crate::routing::TopologySpec;
use crate::scheduler::SlotPolicy;
use crate::sim::{SimConfig, SimError, WorkloadParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("field `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn field(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, msg: msg.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    horizon: f64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    code: CodeParams,
    #[serde(default)]
    footprint: RawFootprint,
    scheduler: RawScheduler,
    workload: WorkloadParams,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFootprint {
    #[serde(default)]
    mode: Option<String>,
    seed: Option<u64>,
    rows: Option<Vec<Vec<usize>>>,
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduler {
    #[serde(default = "default_slot")]
    slot: String,
    slot_size: f64,
    t0: f64,
}

fn default_slot() -> String {
    "count".into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    topology: Option<String>,
    edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    message_delay: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default = "yes")]
    keep_trace: bool,
    #[serde(default)]
    paranoid: bool,
    #[serde(default = "no_limit")]
    max_events: u64,
}

impl Default for RawRun {
    fn default() -> Self {
        Self {
            keep_trace: true,
            paranoid: false,
            max_events: no_limit(),
        }
    }
}

fn yes() -> bool {
    true
}

fn no_limit() -> u64 {
    u64::MAX
}

/// A loaded scenario: the simulation inputs plus where results go.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub sim: SimConfig,
    pub output_dir: PathBuf,
}

impl Config {
    /// `RQSIM_OUT`-style override: a non-empty value replaces the configured
    /// directory.
    pub fn output_dir_with(&self, override_dir: Option<&str>) -> PathBuf {
        match override_dir {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output_dir.clone(),
        }
    }
}

pub const OUTPUT_ENV: &str = "RQSIM_OUT";

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Parses a scenario; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let params = raw.code;
    let fp = &raw.footprint;
    let mode = fp.mode.as_deref().unwrap_or("dense");
    let footprint = match mode {
        "dense" => FootprintMatrix::from_mode(&params, &FootprintMode::Dense),
        "uniform" => {
            let seed = fp.seed.ok_or_else(|| field("footprint.seed", "required for uniform mode"))?;
            FootprintMatrix::from_mode(&params, &FootprintMode::Uniform { seed })
        }
        "explicit" => match (&fp.rows, &fp.path) {
            (Some(rows), None) => FootprintMatrix::from_mode(&params, &FootprintMode::Explicit { rows: rows.clone() }),
            (None, Some(p)) => {
                let full = base.join(p);
                let file = fs::File::open(&full).map_err(|source| ConfigError::Io { path: full, source })?;
                FootprintMatrix::read_csv(BufReader::new(file))
            }
            _ => return Err(field("footprint.rows", "explicit mode needs exactly one of `rows` or `path`")),
        },
        other => return Err(field("footprint.mode", format!("unknown mode `{other}`"))),
    }
    .map_err(|e| field("footprint", e.to_string()))?;

    let s = &raw.scheduler;
    let slot = match s.slot.as_str() {
        "count" => {
            if s.slot_size.fract() != 0.0 || s.slot_size < 1.0 {
                return Err(field("scheduler.slot_size", "count slots need a positive integer size"));
            }
            SlotPolicy::Count(s.slot_size as usize)
        }
        "window" => SlotPolicy::TimeWindow(s.slot_size),
        other => return Err(field("scheduler.slot", format!("unknown slot policy `{other}`"))),
    };

    let n = &raw.network;
    let topology = match (n.topology.as_deref().unwrap_or("path"), &n.edges) {
        ("path", None) => TopologySpec::Path,
        ("ring", None) => TopologySpec::Ring,
        ("edges", Some(e)) => TopologySpec::Edges { edges: e.clone() },
        ("edges", None) => return Err(field("network.edges", "required for edges topology")),
        (_, Some(_)) => return Err(field("network.edges", "only allowed with topology = \"edges\"")),
        (other, None) => return Err(field("network.topology", format!("unknown topology `{other}`"))),
    };

    let sim = SimConfig {
        params,
        footprint,
        slot,
        t0: s.t0,
        workload: raw.workload,
        topology,
        message_delay: n.message_delay,
        horizon: raw.horizon,
        seed: raw.seed,
        keep_trace: raw.run.keep_trace,
        paranoid: raw.run.paranoid,
        max_events: raw.run.max_events,
    };
    sim.validate().map_err(|e| match e {
        SimError::Config(m) => ConfigError::Invalid(m),
        other => ConfigError::Invalid(other.to_string()),
    })?;
    let output_dir = base.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("out")));
    Ok(Config { sim, output_dir })
}
