//! The `armacell` command line: simulate data, train and evaluate networks,
//! run parameter recovery and paper-style benchmarks from JSON configs.
//!
//! Every command writes into an output directory. Results depend only on the
//! config and seeds, so re-running a config reproduces every CSV byte for
//! byte; wall-clock timestamps go to `run.json` and nowhere else.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod plot;
pub mod report;

use std::path::PathBuf;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Train,
    Evaluate,
    Recover,
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Recover => "recover",
            Command::Benchmark => "benchmark",
        }
    }
}

#[derive(Clone, Debug, clap::Parser)]
#[command(name = "armacell", version, about = "ARMA cell experiments")]
pub struct Cli {
    pub command: Command,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// For `recover`: visit every (p, q) up to the configured maximum order.
    #[arg(long)]
    pub sweep: bool,
}

pub const THREADS_ENV: &str = "ARMACELL_THREADS";

/// Caps the global worker pool from `ARMACELL_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("armacell-out"));
    let ctx = commands::Context {
        cfg,
        out,
        sweep: cli.sweep,
    };
    commands::dispatch(cli.command, &ctx)
}
