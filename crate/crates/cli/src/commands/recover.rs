use armacell::cells::{LayerParams, NetworkParams, NetworkSpec};
use armacell::classical::{fit_css, fold, ArmaCoefficients};
use armacell::datagen::{simulate, ArmaProcess, DgpSpec, Process, SplitSizes};
use armacell::training::{train, Monitor, SeriesSplits, TrainConfig, TrainData};

use super::{num, Context};
use crate::config::{RecoverConfig, SweepConfig};
use crate::data::{create_dir, write_csv};
use crate::error::{CliError, Result};
use crate::plot;

/// ARMA(p, q) with AR polynomial `(1 − a·L)^p` and MA polynomial `(1 + b·L)^q`.
pub fn sweep_process(p: usize, q: usize, sweep: &SweepConfig) -> ArmaProcess {
    let binom = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    ArmaProcess {
        alpha: 0.0,
        beta: (1..=p)
            .map(|i| -binom(p, i) * (-sweep.ar_factor).powi(i as i32))
            .collect(),
        gamma: (1..=q)
            .map(|j| binom(q, j) * sweep.ma_factor.powi(j as i32))
            .collect(),
    }
}

struct Case {
    name: String,
    dgp: DgpSpec,
    p: usize,
    q: usize,
}

/// Generating coefficients padded to the cell's orders.
fn true_coefficients(process: &Process, p: usize, q: usize) -> Result<ArmaCoefficients> {
    let mut c = match process {
        Process::Arma(a) => ArmaCoefficients::univariate(a.alpha, &a.beta, &a.gamma),
        Process::Varma(v) => ArmaCoefficients {
            alpha: v.alpha.clone(),
            beta: v.b.clone(),
            gamma: v.gamma.clone(),
            sigma2: vec![],
        },
        other => {
            return Err(CliError::Config(format!(
                "recover needs an arma or varma process, got {}",
                other.name()
            )))
        }
    };
    if c.beta.len() > p || c.gamma.len() > q {
        return Err(CliError::Config(format!(
            "cell orders ({p},{q}) are smaller than the process orders ({},{})",
            c.beta.len(),
            c.gamma.len()
        )));
    }
    let k = c.alpha.len();
    let zero = vec![vec![0.0; k]; k];
    c.beta.resize(p, zero.clone());
    c.gamma.resize(q, zero.clone());
    c.sigma2 = zero;
    Ok(c)
}

/// Named scalar entries of a linear cell's parameters, e.g. `layer0.beta1[0,1]`.
fn flat_named(spec: &NetworkSpec, params: &NetworkParams) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (name, t) in params.named_tensors(spec)? {
        let shape = t.shape().to_vec();
        for (i, &v) in t.data().iter().enumerate() {
            let label = match shape.len() {
                1 => format!("{name}[{i}]"),
                _ => format!("{name}[{},{}]", i / shape[1], i % shape[1]),
            };
            out.push((label, v));
        }
    }
    Ok(out)
}

fn as_network(spec: &NetworkSpec, coefs: &ArmaCoefficients) -> Result<Vec<(String, f64)>> {
    let params = NetworkParams {
        layers: vec![LayerParams::Arma(fold(coefs)?)],
        head: None,
        norms: vec![],
    };
    flat_named(spec, &params)
}

struct Outcome {
    rows: Vec<Vec<String>>,
    summary: Vec<String>,
    failed: bool,
}

fn run_case(ctx: &Context, rc: &RecoverConfig, case: &Case, seed: u64) -> Result<Outcome> {
    let x = simulate(&case.dgp, rc.n, seed)?;
    let k = x.shape()[1];
    let truth = true_coefficients(&case.dgp.process, case.p, case.q)?;
    let spec = NetworkSpec::linear_cell(k, case.p, case.q);
    let want = as_network(&spec, &truth)?;
    let classical = fit_css(&x, case.p, case.q)
        .ok()
        .map(|f| as_network(&spec, &f.coefs))
        .transpose()?;
    let splits = SeriesSplits::new(
        x,
        SplitSizes {
            train: rc.n,
            val: 0,
            test: 0,
        },
    )?;
    let cfg = TrainConfig {
        seed,
        record_trajectory: true,
        ..rc.train.clone()
    };
    let head = vec![case.name.clone(), seed.to_string()];
    let trained = match train(&spec, &TrainData::Series(&splits), &cfg) {
        Ok(t) => t,
        Err(e) => {
            let mut summary = head;
            summary.extend(["", "", "", "", "false"].map(String::from));
            summary.push(e.to_string());
            return Ok(Outcome {
                rows: vec![],
                summary,
                failed: true,
            });
        }
    };
    let got = flat_named(&spec, &trained.params)?;

    let dir = if ctx.sweep {
        ctx.out.join(&case.name).join(format!("seed{seed}"))
    } else {
        ctx.seed_dir(seed)
    };
    create_dir(&dir)?;
    let names: Vec<&str> = got.iter().map(|(n, _)| n.as_str()).collect();
    let traj_rows: Vec<Vec<String>> = trained
        .history
        .trajectory
        .iter()
        .enumerate()
        .map(|(e, theta)| {
            std::iter::once(e.to_string())
                .chain(theta.iter().map(|v| num(*v)))
                .collect()
        })
        .collect();
    let mut header = vec!["epoch"];
    header.extend(&names);
    write_csv(&dir.join("trajectory.csv"), &header, &traj_rows)?;
    let lines: Vec<(String, Vec<f64>)> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let path = trained.history.trajectory.iter().map(|t| t[i]).collect();
            (n.to_string(), path)
        })
        .collect();
    let refs: Vec<Option<f64>> = want.iter().map(|(_, v)| Some(*v)).collect();
    plot::write_line_chart(
        &dir.join("trajectory.svg"),
        &format!("Linear ARMA({},{}) cell, seed {seed}", case.p, case.q),
        "epoch",
        &lines,
        &refs,
    )?;

    let mut max_dev: f64 = 0.0;
    let mut max_dev_classical: Option<f64> = classical.as_ref().map(|_| 0.0);
    let mut rows = Vec::new();
    for (i, ((name, estimate), (_, truth))) in got.iter().zip(&want).enumerate() {
        let dev = (estimate - truth).abs();
        max_dev = max_dev.max(dev);
        let css = classical.as_ref().map(|c| c[i].1);
        if let (Some(m), Some(c)) = (max_dev_classical.as_mut(), css) {
            *m = m.max((estimate - c).abs());
        }
        rows.push(vec![
            case.name.clone(),
            seed.to_string(),
            name.clone(),
            num(*truth),
            css.map(num).unwrap_or_default(),
            num(*estimate),
            num(dev),
        ]);
    }
    let mut summary = head;
    summary.extend([
        trained.history.epochs.len().to_string(),
        trained.history.best_epoch.to_string(),
        num(max_dev),
        max_dev_classical.map(num).unwrap_or_default(),
        (max_dev <= rc.tolerance).to_string(),
        String::new(),
    ]);
    Ok(Outcome {
        rows,
        summary,
        failed: false,
    })
}

/// Simulates a known (V)ARMA process, fits a single linear cell and reports
/// how far the learned weights are from the folded generating coefficients
/// (and from a CSS fit of the same data).
pub fn run(ctx: &Context) -> Result<()> {
    let rc = ctx.cfg.recover.clone().unwrap_or_default();
    if rc.train.monitor != Monitor::Train {
        return Err(CliError::Config(
            "recover trains on the whole series and must monitor the training loss".into(),
        ));
    }
    let cases = if ctx.sweep {
        let m = rc.sweep.max_order;
        (0..=m)
            .flat_map(|p| (0..=m).map(move |q| (p, q)))
            .filter(|&pq| pq != (0, 0))
            .map(|(p, q)| Case {
                name: format!("arma_{p}_{q}"),
                dgp: DgpSpec {
                    process: Process::Arma(sweep_process(p, q, &rc.sweep)),
                    ..rc.dgp.clone()
                },
                p,
                q,
            })
            .collect()
    } else {
        let (p0, q0) = match &rc.dgp.process {
            Process::Arma(a) => (a.beta.len(), a.gamma.len()),
            Process::Varma(v) => (v.b.len(), v.gamma.len()),
            _ => (0, 0),
        };
        let (p, q) = (rc.p.unwrap_or(p0), rc.q.unwrap_or(q0));
        vec![Case {
            name: format!("{}_{p}_{q}", rc.dgp.process.name()),
            dgp: rc.dgp.clone(),
            p,
            q,
        }]
    };
    let jobs: Vec<(usize, u64)> = (0..cases.len())
        .flat_map(|c| ctx.cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes = armacell::parallel::map(&jobs, |&(c, s)| run_case(ctx, &rc, &cases[c], s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<Vec<String>> = outcomes.iter().flat_map(|o| o.rows.clone()).collect();
    write_csv(
        &ctx.out.join("recovery.csv"),
        &[
            "case",
            "seed",
            "parameter",
            "true",
            "classical",
            "estimate",
            "abs_deviation",
        ],
        &rows,
    )?;
    let summary: Vec<Vec<String>> = outcomes.iter().map(|o| o.summary.clone()).collect();
    write_csv(
        &ctx.out.join("summary.csv"),
        &[
            "case",
            "seed",
            "epochs",
            "best_epoch",
            "max_deviation",
            "max_deviation_from_classical",
            "recovered",
            "error",
        ],
        &summary,
    )?;
    if outcomes.iter().any(|o| o.failed) {
        let n = outcomes.iter().filter(|o| o.failed).count();
        return Err(CliError::Numeric(format!(
            "{n} of {} recovery runs diverged; see summary.csv",
            outcomes.len()
        )));
    }
    Ok(())
}
