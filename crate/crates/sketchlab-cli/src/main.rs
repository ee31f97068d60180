//! `sketchlab`: build sketches, run attacks, generate hard instances and run numeric checks.
//!
//! Exit codes: 0 success, 2 a checked threshold failed, 1 any error.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::StatsCheck;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Attack(#[from] sketchlab::attack::AttackError),
    #[error(transparent)]
    Sketch(#[from] sketchlab::sketch::SketchError),
    #[error(transparent)]
    Lattice(#[from] sketchlab::lattice::LatticeError),
    #[error(transparent)]
    Hard(#[from] sketchlab::harddist::HardError),
    #[error(transparent)]
    Stats(#[from] sketchlab::stats::StatsError),
    #[error(transparent)]
    Dgauss(#[from] sketchlab::dgauss::DgaussError),
    #[error(transparent)]
    Suite(#[from] sketchlab::suite::SuiteError),
}

/// Whether a command's checked thresholds held.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    ThresholdFailed,
}

#[derive(Debug, Parser)]
#[command(name = "sketchlab", version, about = "Adaptive attacks on integer linear sketches")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct GlobalArgs {
    /// Root seed (default: config `seed`, else 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: config `out`, else `sketchlab-out`).
    #[arg(long, global = true, env = "SKETCHLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel trials.
    #[arg(long, global = true, env = "SKETCHLAB_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rowspan-learning attack.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Sketch construction.
    #[command(subcommand)]
    Sketch(SketchCommand),
    /// Hard-instance generators.
    #[command(subcommand)]
    Harddist(HardCommand),
    /// Numeric checks.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Test batteries.
    #[command(subcommand)]
    Suite(SuiteCommand),
}

#[derive(Debug, Subcommand)]
pub enum AttackCommand {
    /// Runs the attack for each configured run and verifies any certificates.
    Run,
    /// Re-verifies the certificates of a previous run.
    Verify {
        /// Certificate file (default: `<out>/certificate.json`).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SketchCommand {
    /// Builds the first run's sketch and writes it to `sketch.json`.
    Build,
    /// Prints a summary of a sketch file, or of the configured sketch.
    Info {
        #[arg(long)]
        sketch: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum HardCommand {
    /// Calibrates a family and writes instances to `instances.jsonl`.
    Gen {
        /// Family name at desk parameters; defaults to the config `harddist` block.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Runs the paired gap-event battery.
    Gap {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        pairs: Option<usize>,
        /// Required fraction of pairs where both events hold.
        #[arg(long, default_value_t = 0.95)]
        min_fraction: f64,
    },
    /// Empirical TVD between sketched null and spiked matrices.
    Tvd {
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Spike scale `s₁ = spike/√n` in units of the noise level.
        #[arg(long, default_value_t = 0.1)]
        spike: f64,
        #[arg(long, default_value_t = 1e4)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        /// Fail (exit 2) if the estimate exceeds this value.
        #[arg(long)]
        max_tvd: Option<f64>,
        /// Fail (exit 2) if the estimate falls below this value.
        #[arg(long)]
        min_tvd: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SideArg {
    D1,
    D2,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Runs one numeric check; without a subcommand the config `stats` block is used.
    Check {
        #[command(subcommand)]
        check: Option<StatsCheck>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SuiteCommand {
    /// Runs the acceptance battery.
    Acceptance {
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ThresholdFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
