mod analyze;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CommandError;

#[derive(Parser)]
#[command(name = "rqsim", version, about = "Quorum protocol simulator for regenerating-coded storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and metrics.csv.
    Simulate {
        config: PathBuf,
        /// Replace the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run several seeds in parallel, one subdirectory each.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Vec<u64>,
    },
    /// Evaluate a closed-form formula, e.g. `analyze mm1_pn lambda=1 mu=2 n=0`.
    Analyze {
        formula: String,
        /// Parameters as name=value.
        params: Vec<String>,
        /// Sweep one parameter: name=start:end:points.
        #[arg(long)]
        sweep: Option<String>,
        /// Write the sweep CSV here instead of stdout.
        #[arg(long, requires = "sweep")]
        out: Option<PathBuf>,
    },
    /// Backlog completion curves, analytical and simulated.
    Figure5 {
        #[arg(long, default_value_t = 10.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,50")]
        n0: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Place the scenario's chunks and write placement.csv.
    Placement { config: PathBuf },
    /// Replay a trace and re-check every protocol invariant.
    TraceCheck { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Simulate { config, seed, seeds } => commands::simulate(&config, seed, &seeds, &mut stdout),
        Command::Analyze {
            formula,
            params,
            sweep,
            out,
        } => commands::analyze(&formula, &params, sweep.as_deref(), out.as_deref(), &mut stdout),
        Command::Figure5 {
            mu,
            t_max,
            steps,
            n0,
            replications,
            seed,
            out,
        } => commands::figure5(mu, t_max, steps, &n0, replications, seed, out.as_deref(), &mut stdout),
        Command::Placement { config } => commands::placement(&config, &mut stdout),
        Command::TraceCheck { trace } => commands::trace_check(&trace, &mut stdout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rqsim: {e}");
            ExitCode::from(match e {
                CommandError::Usage(_) => 2,
                CommandError::Invariant(_) => 1,
            })
        }
    }
}
