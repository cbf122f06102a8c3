use armacell::cells::predict_next_frames;
use armacell::training::{metric, series_predictions, MetricKind, Segment};
use armacell::Tensor;

use super::train::CHECKPOINT_DIR;
use super::{num, per_seed, Context};
use crate::checkpoint;
use crate::config::ModelChoice;
use crate::data::{self, create_dir, frame_splits, series_splits, write_csv, Dataset};
use crate::error::{CliError, Result};
use crate::plot;

/// Frames shown in the prediction grid.
const GRID_ROWS: usize = 4;

/// Loads each seed's checkpoint, checks it belongs to this config's data and
/// model, and scores the test split.
pub fn run(ctx: &Context) -> Result<()> {
    let source = ctx.cfg.data()?;
    let root = ctx.cfg.checkpoint.clone().unwrap_or_else(|| ctx.out.clone());
    let per = per_seed(ctx, |seed| {
        let dir = ctx.seed_dir(seed);
        create_dir(&dir)?;
        let ckpt = root.join(format!("seed{seed}")).join(CHECKPOINT_DIR);
        let (manifest, params) = checkpoint::load(&ckpt)?;
        if manifest.seed != seed {
            return Err(CliError::Integrity(format!(
                "checkpoint was trained with seed {}, not {seed}",
                manifest.seed
            )));
        }
        if let Some(ModelChoice::Fixed { spec }) = &ctx.cfg.model {
            if *spec != manifest.spec {
                return Err(CliError::Integrity(
                    "checkpoint network differs from the configured model".into(),
                ));
            }
        }
        let dataset = data::load(source, seed)?;
        if dataset.fingerprint() != manifest.data_sha256 {
            return Err(CliError::Integrity(
                "checkpoint was trained on different data".into(),
            ));
        }
        let spec = &manifest.spec;
        let metrics = match dataset {
            Dataset::Series(x) => {
                let splits = series_splits(x, &ctx.cfg.split)?;
                let (pred, target) = series_predictions(spec, &params, &splits, Segment::Test)?;
                write_predictions(&dir, &pred, &target)?;
                vec![
                    ("rmse", metric(MetricKind::Rmse, &pred, &target)?),
                    ("mae", metric(MetricKind::Mae, &pred, &target)?),
                ]
            }
            Dataset::Frames { inputs, targets } => {
                let (_, _, te) = frame_splits(&inputs, &targets, &ctx.cfg.split)?;
                let pred = predict_next_frames(spec, &params, &te.inputs)?;
                let last = last_frames(&te.inputs);
                let rows: Vec<Vec<Tensor>> = (0..te.len().min(GRID_ROWS))
                    .map(|i| {
                        vec![
                            last.index_axis0(i),
                            te.targets.index_axis0(i),
                            pred.index_axis0(i),
                        ]
                    })
                    .collect();
                plot::frame_grid_png(&dir.join("frames.png"), &rows)?;
                vec![
                    ("bce", metric(MetricKind::Bce, &pred, &te.targets)?),
                    (
                        "repeat_last_frame_bce",
                        metric(MetricKind::Bce, &last, &te.targets)?,
                    ),
                ]
            }
        };
        let rows: Vec<Vec<String>> = metrics
            .iter()
            .map(|(m, v)| vec![m.to_string(), num(*v)])
            .collect();
        write_csv(&dir.join("metrics.csv"), &["metric", "value"], &rows)?;
        Ok(metrics)
    })?;
    let rows: Vec<Vec<String>> = ctx
        .cfg
        .seeds
        .iter()
        .zip(&per)
        .flat_map(|(seed, ms)| {
            ms.iter()
                .map(move |(m, v)| vec![seed.to_string(), m.to_string(), num(*v)])
        })
        .collect();
    write_csv(&ctx.out.join("metrics.csv"), &["seed", "metric", "value"], &rows)
}

/// Last input frame of every clip, `[N×H×W×C]`.
pub fn last_frames(inputs: &Tensor) -> Tensor {
    let t = inputs.shape()[1];
    let frames: Vec<Tensor> = (0..inputs.shape()[0])
        .map(|i| inputs.index_axis0(i).index_axis0(t - 1))
        .collect();
    Tensor::stack(&frames).expect("equal frame shapes")
}

fn write_predictions(dir: &std::path::Path, pred: &Tensor, target: &Tensor) -> Result<()> {
    let k = pred.shape()[1];
    let mut header = vec!["row".to_string()];
    header.extend((1..=k).map(|j| format!("pred_x{j}")));
    header.extend((1..=k).map(|j| format!("actual_x{j}")));
    let rows: Vec<Vec<String>> = pred
        .data()
        .chunks(k)
        .zip(target.data().chunks(k))
        .enumerate()
        .map(|(r, (p, y))| {
            std::iter::once(r.to_string())
                .chain(p.iter().chain(y).map(|v| num(*v)))
                .collect()
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("predictions.csv"), &h, &rows)?;
    let column = |t: &Tensor| t.data().iter().step_by(k).copied().collect::<Vec<f64>>();
    plot::write_line_chart(
        &dir.join("predictions.svg"),
        "Test split, first variable",
        "test step",
        &[
            ("actual".to_string(), column(target)),
            ("predicted".to_string(), column(pred)),
        ],
        &[],
    )
}
