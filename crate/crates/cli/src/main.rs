//! `mdro`: calibrate radii, solve, certify, backtest, sweep costs, simulate
//! and report.
//!
//! Exit codes: 0 success, 1 solver or numeric failure, 2 input or config
//! error.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use commands::{Classify, Failure};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "mdro", version, about = "Distributionally robust sampled-data portfolio control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate ambiguity radii into radii.json.
    Calibrate,
    /// Solve every horizon and certify gaps into solutions.json and gaps.json.
    Solve,
    /// Rolling backtest into ledger.csv, events.csv, metrics.json and plots.
    Backtest,
    /// Adaptive backtest per cost rate into tc_sweep.json.
    TcSweep,
    /// Long-run and viability simulation into simulate.json.
    Simulate,
    /// Render plots and a metrics table from an output directory.
    Report {
        /// Directory to report on; defaults to --out.
        dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config is required")).input()?;
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).input()?;
    let cfg = RunConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display())).input()?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let cfg = cfg.resolve(&base, cli.out.clone(), cli.seed);
    cfg.validate().input()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().input()?;
    }
    match &cli.command {
        Command::Report { dir } => {
            let dir = dir.clone().or_else(|| cli.out.clone()).ok_or_else(|| anyhow!("no directory given")).input()?;
            commands::report(&dir)
        }
        Command::Calibrate => commands::calibrate(&load_config(&cli)?),
        Command::Solve => commands::solve(&load_config(&cli)?),
        Command::Backtest => commands::backtest(&load_config(&cli)?),
        Command::TcSweep => commands::tc_sweep(&load_config(&cli)?),
        Command::Simulate => commands::simulate(&load_config(&cli)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
