mod benchmark;
mod evaluate;
mod recover;
mod simulate;
mod train;

pub use benchmark::{classical_baseline, ClassicalFit};
pub use recover::sweep_process;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{file_sha256, write_json};
use crate::error::{CliError, Result};
use crate::Command;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub sweep: bool,
}

impl Context {
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed{seed}"))
    }
}

pub fn dispatch(command: Command, ctx: &Context) -> Result<()> {
    if ctx.sweep && command != Command::Recover {
        return Err(CliError::Config("--sweep only applies to recover".into()));
    }
    crate::data::create_dir(&ctx.out)?;
    let started = unix_seconds();
    match command {
        Command::Simulate => simulate::run(ctx)?,
        Command::Train => train::run(ctx)?,
        Command::Evaluate => evaluate::run(ctx)?,
        Command::Recover => recover::run(ctx)?,
        Command::Benchmark => benchmark::run(ctx)?,
    }
    write_run_manifest(command, ctx, started)
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    sweep: bool,
    threads: usize,
    started_unix: u64,
    finished_unix: u64,
    files: Vec<FileEntry>,
}

pub const RUN_MANIFEST: &str = "run.json";

/// Records what ran and the hash of every emitted file. This is the only
/// artifact carrying timestamps.
fn write_run_manifest(command: Command, ctx: &Context, started: u64) -> Result<()> {
    let mut paths = Vec::new();
    list_files(&ctx.out, &mut paths)?;
    paths.sort();
    let files = paths
        .iter()
        .filter(|p| p.as_path() != ctx.out.join(RUN_MANIFEST))
        .map(|p| {
            Ok(FileEntry {
                path: p
                    .strip_prefix(&ctx.out)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/"),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command: command.name(),
        config: &ctx.cfg,
        seeds: &ctx.cfg.seeds,
        sweep: ctx.sweep,
        threads: armacell::parallel::current_threads(),
        started_unix: started,
        finished_unix: unix_seconds(),
        files,
    };
    write_json(&ctx.out.join(RUN_MANIFEST), &manifest)
}

fn list_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            list_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Formats a value for CSV with enough digits to round-trip exactly.
pub(crate) fn num(v: f64) -> String {
    v.to_string()
}

pub(crate) fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Runs `f` for every seed (in parallel) and returns results in seed order.
pub(crate) fn per_seed<T: Send>(
    ctx: &Context,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    armacell::parallel::map(&ctx.cfg.seeds, |&s| f(s))
        .into_iter()
        .collect()
}
