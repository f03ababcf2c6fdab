use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arfilt::expkit::{self, ExperimentConfig};
use arfilt::{ArfiltError, Result};

#[derive(Parser)]
#[command(
    name = "arfilt",
    version,
    about = "Learn AR prediction filters from designed experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the designed rollouts and persist them.
    Simulate(Common),
    /// Estimate the filter pair from persisted rollouts.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Also fit the ordinary least-squares and FIR baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Evaluate the estimate and write report.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate the true filters instead of the estimate.
        #[arg(long)]
        oracle: bool,
    },
    /// Run the ell-ladder scaling experiment.
    Bench(Common),
    /// Print the FIR-versus-AR comparison table.
    KalmanDemo(Common),
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ARFILT_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        ArfiltError::Config(format!(
            "ARFILT_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ArfiltError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<String> {
    configure_threads()?;
    let load = |c: &Common| ExperimentConfig::load(&c.config);
    let out = |c: &Common| c.out.clone();
    Ok(match &cli.command {
        Command::Simulate(c) => expkit::cmd_simulate(&load(c)?, out(c).as_deref())?.to_string(),
        Command::Estimate { common, baselines } => {
            expkit::cmd_estimate(&load(common)?, out(common).as_deref(), *baselines)?.to_string()
        }
        Command::Evaluate { common, oracle } => {
            expkit::cmd_evaluate(&load(common)?, out(common).as_deref(), *oracle)?.to_string()
        }
        Command::Bench(c) => expkit::cmd_bench(&load(c)?, out(c).as_deref())?.to_string(),
        Command::KalmanDemo(c) => {
            let (path, table) = expkit::cmd_kalman_demo(&load(c)?, out(c).as_deref())?;
            log::info!("wrote {}", Path::new(&path).display());
            table.trim_end().to_string()
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
