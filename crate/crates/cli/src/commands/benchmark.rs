use armacell::cells::predict_next_frames;
use armacell::classical::{fit_css, forecast, ArmaCoefficients};
use armacell::training::{
    describe, grid_search, metric, train, GridSpec, MetricKind, Segment, SeriesSplits,
    TrainConfig, TrainData,
};
use armacell::Tensor;

use super::evaluate::last_frames;
use super::{num, Context};
use crate::config::{BenchmarkConfig, Method, OrderGrid, SplitConfig};
use crate::data::{self, frame_splits, series_splits, write_csv, Dataset};
use crate::error::{CliError, Result};
use crate::report::{CellValues, Table};

#[derive(Clone, Debug)]
pub struct ClassicalFit {
    pub p: usize,
    pub q: usize,
    pub coefs: ArmaCoefficients,
    pub val_rmse: f64,
    pub test_rmse: f64,
    pub test_mae: f64,
}

/// One-step forecasts for a segment, using the whole series before it as context.
fn classical_predictions(
    coefs: &ArmaCoefficients,
    data: &SeriesSplits,
    seg: Segment,
) -> Result<(Tensor, Tensor)> {
    let (start, end) = data.range(seg);
    let m = coefs.lags();
    let first = start.max(m);
    let f = forecast(coefs, &data.series.slice_axis0(0, end))?;
    Ok((
        f.slice_axis0(first - m, end - m),
        data.series.slice_axis0(first, end),
    ))
}

/// CSS fits of every order on the training segment; the one with the lowest
/// validation RMSE wins (earlier orders win exact ties).
pub fn classical_baseline(data: &SeriesSplits, orders: &OrderGrid) -> Result<ClassicalFit> {
    let train_seg = data.segment(Segment::Train);
    let mut best: Option<ClassicalFit> = None;
    let mut failures = Vec::new();
    for &p in &orders.p {
        for &q in &orders.q {
            if p == 0 && q == 0 {
                continue;
            }
            let scored = fit_css(&train_seg, p, q).map_err(CliError::from).and_then(|fit| {
                let (vp, vy) = classical_predictions(&fit.coefs, data, Segment::Val)?;
                Ok((fit.coefs, metric(MetricKind::Rmse, &vp, &vy)?))
            });
            match scored {
                Ok((coefs, v)) if v.is_finite() => {
                    if best.as_ref().map_or(true, |b| v < b.val_rmse) {
                        best = Some(ClassicalFit {
                            p,
                            q,
                            coefs,
                            val_rmse: v,
                            test_rmse: f64::NAN,
                            test_mae: f64::NAN,
                        });
                    }
                }
                Ok(_) => failures.push(format!("arma({p},{q}): non-finite validation RMSE")),
                Err(e) => failures.push(format!("arma({p},{q}): {e}")),
            }
        }
    }
    let mut best = best.ok_or_else(|| {
        CliError::Numeric(format!("every classical order failed: {}", failures.join("; ")))
    })?;
    let (tp, ty) = classical_predictions(&best.coefs, data, Segment::Test)?;
    best.test_rmse = metric(MetricKind::Rmse, &tp, &ty)?;
    best.test_mae = metric(MetricKind::Mae, &tp, &ty)?;
    Ok(best)
}

struct Job {
    dataset: usize,
    method: Method,
    seed: u64,
}

struct JobResult {
    model: String,
    metrics: Vec<(&'static str, f64)>,
}

fn grid_method(
    grid: &GridSpec,
    splits: &SeriesSplits,
    cfg: &TrainConfig,
) -> Result<JobResult> {
    let r = grid_search(&grid.expand(splits.dim())?, splits, cfg)?;
    let e = r
        .leaderboard
        .iter()
        .find(|e| e.index == r.best)
        .expect("winner is on the leaderboard");
    Ok(JobResult {
        model: e.model.clone(),
        metrics: vec![
            ("rmse", e.test_rmse.expect("winner trained")),
            ("mae", e.test_mae.expect("winner trained")),
        ],
    })
}

fn run_job(
    bc: &BenchmarkConfig,
    split: &SplitConfig,
    train_cfg: &TrainConfig,
    job: &Job,
) -> Result<JobResult> {
    let source = &bc.datasets[job.dataset].data;
    match data::load(source, job.seed)? {
        Dataset::Series(x) => {
            let splits = series_splits(x, split)?;
            let cfg = TrainConfig {
                seed: job.seed,
                ..train_cfg.clone()
            };
            match job.method {
                Method::ShallowArma => grid_method(&bc.shallow_grid, &splits, &cfg),
                Method::DeepArma => grid_method(&bc.deep_grid, &splits, &cfg),
                Method::ClassicalArma => {
                    let fit = classical_baseline(&splits, &bc.classical_orders)?;
                    Ok(JobResult {
                        model: format!("arma({},{})", fit.p, fit.q),
                        metrics: vec![("rmse", fit.test_rmse), ("mae", fit.test_mae)],
                    })
                }
                Method::ConvArma | Method::RepeatLastFrame => unreachable!("filtered"),
            }
        }
        Dataset::Frames { inputs, targets } => {
            let (tr, va, te) = frame_splits(&inputs, &targets, split)?;
            match job.method {
                Method::RepeatLastFrame => Ok(JobResult {
                    model: "repeat-last-frame".into(),
                    metrics: vec![(
                        "bce",
                        metric(MetricKind::Bce, &last_frames(&te.inputs), &te.targets)?,
                    )],
                }),
                Method::ConvArma => {
                    let spec = bc.conv.spec(*inputs.shape().last().unwrap_or(&1));
                    let cfg = TrainConfig {
                        seed: job.seed,
                        ..bc.conv.train.clone()
                    };
                    let t = train(
                        &spec,
                        &TrainData::Frames {
                            train: &tr,
                            val: &va,
                        },
                        &cfg,
                    )?;
                    let pred = predict_next_frames(&spec, &t.params, &te.inputs)?;
                    Ok(JobResult {
                        model: describe(&spec),
                        metrics: vec![("bce", metric(MetricKind::Bce, &pred, &te.targets)?)],
                    })
                }
                _ => unreachable!("filtered"),
            }
        }
    }
}

/// Runs every applicable (dataset, method, seed) job on the worker pool and
/// writes raw per-seed results plus mean ± std tables. Failed jobs are
/// recorded and the run carries on.
pub fn run(ctx: &Context) -> Result<()> {
    let bc = ctx
        .cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| CliError::Config("benchmark needs a `benchmark` section".into()))?;
    if bc.datasets.is_empty() || bc.methods.is_empty() {
        return Err(CliError::Config(
            "benchmark needs at least one dataset and one method".into(),
        ));
    }
    let mut jobs = Vec::new();
    for (d, ds) in bc.datasets.iter().enumerate() {
        for &method in &bc.methods {
            if method.for_frames() != ds.data.is_frames() {
                continue;
            }
            for &seed in &ctx.cfg.seeds {
                jobs.push(Job {
                    dataset: d,
                    method,
                    seed,
                });
            }
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Config(
            "no method applies to any configured dataset".into(),
        ));
    }
    let results = armacell::parallel::map(&jobs, |job| {
        run_job(bc, &ctx.cfg.split, &ctx.cfg.train, job)
    });

    let mut rows = Vec::new();
    for (job, r) in jobs.iter().zip(&results) {
        let head = [
            bc.datasets[job.dataset].name.clone(),
            job.method.label().to_string(),
            job.seed.to_string(),
        ];
        match r {
            Ok(r) => {
                for (m, v) in &r.metrics {
                    let mut row = head.to_vec();
                    row.extend([m.to_string(), num(*v), r.model.clone(), String::new()]);
                    rows.push(row);
                }
            }
            Err(e) => {
                let mut row = head.to_vec();
                row.extend([String::new(), String::new(), String::new(), e.to_string()]);
                rows.push(row);
            }
        }
    }
    write_csv(
        &ctx.out.join("results.csv"),
        &["dataset", "method", "seed", "metric", "value", "model", "error"],
        &rows,
    )?;

    let primary = |d: usize| {
        if bc.datasets[d].data.is_frames() {
            "bce"
        } else {
            "rmse"
        }
    };
    let table = |metric_of: &dyn Fn(usize) -> Option<&'static str>, title: &str| {
        let cols: Vec<usize> = (0..bc.datasets.len())
            .filter(|&d| metric_of(d).is_some())
            .collect();
        let columns = cols
            .iter()
            .map(|&d| format!("{} ({})", bc.datasets[d].name, metric_of(d).unwrap()))
            .collect();
        let table_rows = bc
            .methods
            .iter()
            .map(|&method| {
                let cells = cols
                    .iter()
                    .map(|&d| {
                        let m = metric_of(d).unwrap();
                        let mut cell = CellValues::default();
                        let mut any = false;
                        for (job, r) in jobs.iter().zip(&results) {
                            if job.dataset != d || job.method != method {
                                continue;
                            }
                            any = true;
                            match r {
                                Ok(r) => cell.values.extend(
                                    r.metrics.iter().filter(|(k, _)| *k == m).map(|(_, v)| *v),
                                ),
                                Err(_) => cell.failed += 1,
                            }
                        }
                        any.then_some(cell)
                    })
                    .collect();
                (method.label().to_string(), cells)
            })
            .collect();
        Table {
            metric: title.to_string(),
            columns,
            rows: table_rows,
        }
    };
    let main = table(&|d| Some(primary(d)), "test RMSE (series) / BCE (video)");
    main.write_csv(&ctx.out.join("table.csv"))?;
    main.write_text(&ctx.out.join("table.txt"))?;
    if bc.datasets.iter().any(|d| !d.data.is_frames()) {
        let mae = table(&|d| (!bc.datasets[d].data.is_frames()).then_some("mae"), "test MAE");
        mae.write_csv(&ctx.out.join("table_mae.csv"))?;
        mae.write_text(&ctx.out.join("table_mae.txt"))?;
    }
    print!("{}", main.to_text());

    if results.iter().all(|r| r.is_err()) {
        return Err(CliError::Numeric("every benchmark job failed".into()));
    }
    Ok(())
}
