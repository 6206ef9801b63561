use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use regen_quorum::code_model::FootprintMatrix;
use regen_quorum::config::{load_config, Config, OUTPUT_ENV};
use regen_quorum::ids::AccessKind;
use regen_quorum::placement::{build_groups, place_code};
use regen_quorum::sim::{figure5_table, run, write_metrics, SimError, SimOutput};
use regen_quorum::trace::{read_trace, write_trace};
use regen_quorum::verify::verify_trace;

use crate::analyze::{lookup, parse_params, parse_sweep, FORMULAS};

pub const SWEEP_SCHEMA: &str = "#schema=regen-quorum-sweep/1";
pub const AGGREGATE_SCHEMA: &str = "#schema=regen-quorum-aggregate/1";

#[derive(Debug)]
pub enum CommandError {
    /// Bad input: exit code 2.
    Usage(String),
    /// A protocol invariant failed: exit code 1.
    Invariant(String),
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Usage(m) => f.write_str(m),
            CommandError::Invariant(m) => write!(f, "invariant violation: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, CommandError>;

fn usage(e: impl fmt::Display) -> CommandError {
    CommandError::Usage(e.to_string())
}

fn sim_error(e: SimError) -> CommandError {
    match e {
        SimError::Config(_) | SimError::NonPositiveRate(_) => usage(e),
        other => CommandError::Invariant(other.to_string()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CommandError {
    usage(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn output_dir(cfg: &Config) -> PathBuf {
    cfg.output_dir_with(std::env::var(OUTPUT_ENV).ok().as_deref())
}

fn write_run(dir: &Path, out: &SimOutput) -> Result<()> {
    let path = dir.join("trace.csv");
    let mut w = create(&path)?;
    write_trace(&out.trace, &mut w).map_err(usage)?;
    w.flush().map_err(|e| io_error(&path, e))?;
    let path = dir.join("metrics.csv");
    let mut w = create(&path)?;
    write_metrics(&out.metrics, &mut w).map_err(|e| io_error(&path, e))?;
    w.flush().map_err(|e| io_error(&path, e))
}

fn summary(seed: u64, out: &SimOutput) -> String {
    let m = &out.metrics;
    let kinds = [AccessKind::Read, AccessKind::Write, AccessKind::Repair]
        .map(|k| format!("{k} {}/{}", m.completions_of(k), m.arrivals_of(k)));
    format!(
        "seed {seed}: {} events, {}, {} deadlock rounds, {} demotions",
        out.events,
        kinds.join(", "),
        m.deadlock_rounds,
        m.demotions
    )
}

pub fn simulate(config: &Path, seed: Option<u64>, seeds: &[u64], stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_config(config).map_err(usage)?;
    let dir = output_dir(&cfg);
    let mut sim = cfg.sim.clone();
    sim.keep_trace = true;
    if seeds.is_empty() {
        if let Some(s) = seed {
            sim.seed = s;
        }
        let out = run(&sim).map_err(sim_error)?;
        write_run(&dir, &out)?;
        writeln!(stdout, "{}", summary(sim.seed, &out)).map_err(usage)?;
        writeln!(stdout, "wrote {}", dir.display()).map_err(usage)?;
        return Ok(());
    }
    let results: Vec<std::result::Result<SimOutput, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| {
                let mut c = sim.clone();
                c.seed = s;
                scope.spawn(move || run(&c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let mut outputs = Vec::with_capacity(seeds.len());
    for (&s, r) in seeds.iter().zip(results) {
        let out = r.map_err(sim_error)?;
        write_run(&dir.join(format!("seed-{s}")), &out)?;
        writeln!(stdout, "{}", summary(s, &out)).map_err(usage)?;
        outputs.push((s, out));
    }
    // aggregate in seed order so the result does not depend on thread timing
    outputs.sort_by_key(|(s, _)| *s);
    let mut names: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (_, out) in &outputs {
        for (name, v) in out.metrics.rows() {
            match names.iter().position(|n| *n == name) {
                Some(i) => values[i].push(v),
                None => {
                    names.push(name);
                    values.push(vec![v]);
                }
            }
        }
    }
    let path = dir.join("aggregate.csv");
    let mut w = create(&path)?;
    let io = |e| io_error(&path, e);
    writeln!(w, "{AGGREGATE_SCHEMA}").map_err(io)?;
    writeln!(w, "statistic,runs,mean,min,max").map_err(io)?;
    for (name, v) in names.iter().zip(&values) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(w, "{name},{},{mean},{min},{max}", v.len()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    writeln!(stdout, "wrote {}", dir.display()).map_err(usage)?;
    Ok(())
}

pub fn analyze(
    formula: &str,
    params: &[String],
    sweep: Option<&str>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let Some(f) = lookup(formula) else {
        let known: Vec<String> = FORMULAS
            .iter()
            .map(|f| format!("  {} {}: {}", f.name, f.params.join(" "), f.about))
            .collect();
        return Err(usage(format!("unknown formula `{formula}`; known formulas:\n{}", known.join("\n"))));
    };
    let mut p = parse_params(params).map_err(usage)?;
    let Some(sweep) = sweep else {
        let e = f.evaluate(&p).map_err(usage)?;
        let flag = if e.flagged { " FLAG: exceeds 1" } else { "" };
        writeln!(stdout, "{}{flag}", e.value).map_err(usage)?;
        return Ok(());
    };
    let (name, grid) = parse_sweep(sweep).map_err(usage)?;
    if p.contains_key(&name) {
        return Err(usage(format!("`{name}` is both swept and fixed")));
    }
    let mut text = format!("{SWEEP_SCHEMA}\n{name},value,exceeds_one\n");
    for x in grid {
        p.insert(name.clone(), x);
        let e = f.evaluate(&p).map_err(usage)?;
        text.push_str(&format!("{x},{},{}\n", e.value, u8::from(e.flagged)));
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes()).map_err(|e| io_error(path, e))?;
            w.flush().map_err(|e| io_error(path, e))?;
        }
        None => stdout.write_all(text.as_bytes()).map_err(usage)?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn figure5(
    mu: f64,
    t_max: f64,
    steps: usize,
    n0: &[usize],
    replications: usize,
    seed: u64,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let table = figure5_table(mu, t_max, steps, n0, replications, seed).map_err(sim_error)?;
    match out {
        Some(path) => {
            let mut w = create(path)?;
            table.write_csv(&mut w).map_err(|e| io_error(path, e))?;
            w.flush().map_err(|e| io_error(path, e))?;
            writeln!(stdout, "wrote {}", path.display()).map_err(usage)?;
        }
        None => table.write_csv(stdout).map_err(usage)?,
    }
    Ok(())
}

fn chunk_list(chunks: impl IntoIterator<Item = usize>) -> String {
    let v: Vec<String> = chunks.into_iter().map(|c| format!("c{c}")).collect();
    format!("{{{}}}", v.join(","))
}

pub fn placement(config: &Path, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_config(config).map_err(usage)?;
    let p = &cfg.sim.params;
    let footprint: &FootprintMatrix = &cfg.sim.footprint;
    let map = place_code(footprint, p.nodes, p.alpha).map_err(usage)?;
    let path = output_dir(&cfg).join("placement.csv");
    let mut w = create(&path)?;
    map.write_csv(&mut w).map_err(|e| io_error(&path, e))?;
    w.flush().map_err(|e| io_error(&path, e))?;
    let mut report = String::new();
    for g in build_groups(footprint) {
        report.push_str(&format!("group {}: {}\n", g.index, chunk_list(g.chunks.iter().copied())));
    }
    for node in 0..map.nodes() {
        report.push_str(&format!("node {node}: {}\n", chunk_list(map.node_chunks(node).iter().copied())));
    }
    report.push_str(&format!("wrote {}\n", path.display()));
    stdout.write_all(report.as_bytes()).map_err(usage)
}

pub fn trace_check(trace: &Path, stdout: &mut dyn Write) -> Result<()> {
    let file = File::open(trace).map_err(|e| io_error(trace, e))?;
    let records = read_trace(BufReader::new(file)).map_err(usage)?;
    let rep = verify_trace(&records);
    writeln!(
        stdout,
        "{} rows, {} requests, {} grants, {} quorums checked",
        rep.rows, rep.requests, rep.grants, rep.quorums
    )
    .map_err(usage)?;
    if rep.ok() {
        writeln!(stdout, "OK").map_err(usage)?;
        return Ok(());
    }
    for v in rep.violations.iter().take(20) {
        writeln!(stdout, "{v}").map_err(usage)?;
    }
    Err(CommandError::Invariant(format!("{} violations in {}", rep.violations.len(), trace.display())))
}
