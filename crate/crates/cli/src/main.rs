//! `tpn`: model description, cost tables, benchmarks, toy training and
//! the nine-configuration parameter report.
//!
//! Every command prints a readable summary on stdout and writes its
//! machine-readable CSV/JSON files under `--out`. Exit codes: 0 success,
//! 1 numeric failure, 2 usage or configuration error.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] tpn_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(tpn_core::Error::NonFinite(_) | tpn_core::Error::Diverged { .. }) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(
    name = "tpn",
    version,
    about = "Pyramid cores: description, cost models, benchmarks and toy training"
)]
pub struct Cli {
    /// Model description JSON.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving CSV/JSON outputs.
    #[arg(long, global = true, default_value = "tpn-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the core's schedule: stage, op, level and parameter shapes.
    Describe,
    /// Parameter count per module.
    Params,
    /// Convolution FLOPs of one image.
    Flops {
        #[arg(long, default_value_t = 800)]
        height: usize,
        #[arg(long, default_value_t = 800)]
        width: usize,
    },
    /// Median images per second over timed iterations.
    Bench {
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 5)]
        iters: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// `infer` or `train`.
        #[arg(long, default_value = "infer")]
        mode: String,
    },
    /// Train on synthetic scenes; writes the loss log, a checkpoint and
    /// detections on the training scenes.
    Train {
        /// Training configuration JSON; defaults to the toy overfitting run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Detections and AP of a checkpoint on synthetic scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// `(L, B)` frontier: params, FLOPs, throughput and toy metric per row.
    Sweep {
        /// Sweep configuration JSON; defaults to the 3 × 3 grid.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Parameter counts of the nine reference configurations.
    Table1,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
