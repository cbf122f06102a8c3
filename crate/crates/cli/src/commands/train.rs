use armacell::cells::{parameter_count, predict_next_frames, NetworkSpec};
use armacell::training::{
    describe, grid_search, metric, train, History, LeaderboardEntry, MetricKind, TrainConfig,
    TrainData,
};
use serde::Serialize;

use super::{num, opt_num, per_seed, Context};
use crate::checkpoint;
use crate::config::ModelChoice;
use crate::data::{self, create_dir, frame_splits, series_splits, write_csv, write_json, Dataset};
use crate::error::{CliError, Result};

pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Single-point leaderboard for a video network.
#[derive(Clone, Debug, Serialize)]
pub struct FrameEntry {
    pub model: String,
    pub parameters: usize,
    pub val_loss: f64,
    pub val_bce: f64,
    pub test_bce: f64,
}

/// Trains the configured model (grid or fixed) per seed and writes a
/// checkpoint, the leaderboard and the epoch history.
pub fn run(ctx: &Context) -> Result<()> {
    let source = ctx.cfg.data()?;
    let model = ctx.cfg.model()?;
    per_seed(ctx, |seed| {
        let dir = ctx.seed_dir(seed);
        create_dir(&dir)?;
        let cfg = TrainConfig {
            seed,
            ..ctx.cfg.train.clone()
        };
        let dataset = data::load(source, seed)?;
        let fingerprint = dataset.fingerprint();
        let (spec, params, history) = match dataset {
            Dataset::Series(x) => {
                let k = x.shape()[1];
                let splits = series_splits(x, &ctx.cfg.split)?;
                let points = match model {
                    ModelChoice::Fixed { spec } => {
                        check_input_dim(spec, k)?;
                        vec![spec.clone()]
                    }
                    ModelChoice::Grid { grid } => grid.expand(k)?,
                };
                let result = grid_search(&points, &splits, &cfg)?;
                write_leaderboard(&dir, &result.leaderboard)?;
                (result.spec, result.params, result.history)
            }
            Dataset::Frames { inputs, targets } => {
                let ModelChoice::Fixed { spec } = model else {
                    return Err(CliError::Config(
                        "video data needs a fixed ConvARMA model".into(),
                    ));
                };
                check_input_dim(spec, *inputs.shape().last().unwrap_or(&0))?;
                let (tr, va, te) = frame_splits(&inputs, &targets, &ctx.cfg.split)?;
                let trained = train(
                    spec,
                    &TrainData::Frames {
                        train: &tr,
                        val: &va,
                    },
                    &cfg,
                )?;
                let bce = |set: &armacell::training::FrameSet| -> Result<f64> {
                    let p = predict_next_frames(spec, &trained.params, &set.inputs)?;
                    Ok(metric(MetricKind::Bce, &p, &set.targets)?)
                };
                let entry = FrameEntry {
                    model: describe(spec),
                    parameters: parameter_count(spec)?,
                    val_loss: trained.history.best_val_loss,
                    val_bce: bce(&va)?,
                    test_bce: bce(&te)?,
                };
                write_csv(
                    &dir.join("leaderboard.csv"),
                    &["model", "parameters", "val_loss", "val_bce", "test_bce"],
                    &[vec![
                        entry.model.clone(),
                        entry.parameters.to_string(),
                        num(entry.val_loss),
                        num(entry.val_bce),
                        num(entry.test_bce),
                    ]],
                )?;
                write_json(&dir.join("leaderboard.json"), &[&entry])?;
                (spec.clone(), trained.params, trained.history)
            }
        };
        write_history(&dir, &history)?;
        checkpoint::save(
            &dir.join(CHECKPOINT_DIR),
            &spec,
            &params,
            seed,
            &history,
            &fingerprint,
        )?;
        Ok(())
    })?;
    Ok(())
}

fn check_input_dim(spec: &NetworkSpec, k: usize) -> Result<()> {
    if spec.input_dim != k {
        return Err(CliError::Config(format!(
            "model input_dim {} but the data has {k} variables/channels",
            spec.input_dim
        )));
    }
    Ok(())
}

fn write_leaderboard(dir: &std::path::Path, board: &[LeaderboardEntry]) -> Result<()> {
    let rows: Vec<Vec<String>> = board
        .iter()
        .map(|e| {
            vec![
                e.index.to_string(),
                e.model.clone(),
                e.parameters.to_string(),
                opt_num(e.val_loss),
                opt_num(e.val_rmse),
                opt_num(e.test_rmse),
                opt_num(e.test_mae),
                e.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("leaderboard.csv"),
        &[
            "index",
            "model",
            "parameters",
            "val_loss",
            "val_rmse",
            "test_rmse",
            "test_mae",
            "error",
        ],
        &rows,
    )?;
    write_json(&dir.join("leaderboard.json"), &board)
}

fn write_history(dir: &std::path::Path, h: &History) -> Result<()> {
    let rows: Vec<Vec<String>> = h
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                num(e.train_loss),
                num(e.val_loss),
                num(e.lr),
            ]
        })
        .collect();
    write_csv(
        &dir.join("history.csv"),
        &["epoch", "train_loss", "val_loss", "lr"],
        &rows,
    )
}
