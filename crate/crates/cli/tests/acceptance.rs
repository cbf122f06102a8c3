//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if a criterion fails that is not listed in
//! [`KNOWN_RED`].
//!
//! The model-quality criteria drive the `armacell` binary with the configs
//! shipped in `configs/`, so they take a while (about 35 minutes on one core).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use armacell::autodiff::{grad_check, Graph, NodeId};
use armacell::cells::{
    arma_layer_forward, build_frames, build_series, conv_arma_layer_forward, init_params,
    ArmaLayerParams, ConvArmaParams, ConvArmaSpec, LayerSpec, NetworkSpec,
};
use armacell::{Activation, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail for reasons analysed in the decisions ledger. They
/// still print `FAIL`; they just do not fail the test run.
const KNOWN_RED: &[(&str, &str)] = &[];

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        let known = KNOWN_RED.iter().find(|(k, _)| *k == id);
        let tag = if pass { "PASS" } else { "FAIL" };
        let note = match (pass, known) {
            (false, Some((_, why))) => format!(" [known: {why}]"),
            _ => String::new(),
        };
        println!("{tag} {id}: {detail}{note}");
        self.lines.push((id.to_string(), pass || known.is_some()));
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Runs a CLI command and returns its exit code and wall time.
fn armacell(command: &str, cfg: &Path, out: &Path, threads: Option<&str>) -> (i32, Duration) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_armacell"));
    cmd.args([command, "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("ARMACELL_THREADS");
    if let Some(t) = threads {
        cmd.env("ARMACELL_THREADS", t);
    }
    let start = Instant::now();
    let o = cmd.output().expect("binary runs");
    if !o.status.success() {
        eprintln!("{command} {}: {}", cfg.display(), String::from_utf8_lossy(&o.stderr));
    }
    (o.status.code().unwrap_or(-1), start.elapsed())
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Per-seed RMSE values from a benchmark's `results.csv`, keyed by
/// (dataset, method). Failed jobs are counted separately.
fn rmse_by_cell(out: &Path) -> (BTreeMap<(String, String), Vec<f64>>, usize) {
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut failed = 0;
    for row in read_csv(&out.join("results.csv")) {
        if !row["error"].is_empty() {
            failed += 1;
            continue;
        }
        if row["metric"] == "rmse" || row["metric"] == "bce" {
            cells
                .entry((row["dataset"].clone(), row["method"].clone()))
                .or_default()
                .push(row["value"].parse().unwrap());
        }
    }
    (cells, failed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// `x̂_t = α + Σ b_i x_{t−i} − Σ g_j x̂_{t−j}` with `x̂` zero before the
/// first prediction.
fn scalar_recursion(alpha: f64, b: &[f64], g: &[f64], x: &[f64]) -> Vec<f64> {
    let m = b.len().max(g.len());
    let mut xhat = vec![0.0; x.len()];
    for t in m..x.len() {
        let mut v = alpha;
        for (i, bi) in b.iter().enumerate() {
            v += bi * x[t - i - 1];
        }
        for (j, gj) in g.iter().enumerate() {
            v -= gj * xhat[t - j - 1];
        }
        xhat[t] = v;
    }
    xhat[m..].to_vec()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for p in 0..=4 {
        for q in 0..=4 {
            if p == 0 && q == 0 {
                continue;
            }
            let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // folded lag weights run to max(p, q)
            let b = uniform(&mut rng, p.max(q), 0.5);
            // keep Σ|g| < 1 so the recursion stays bounded over 1000 steps
            let g = uniform(&mut rng, q, 0.9 / q.max(1) as f64);
            let alpha = rng.gen_range(-0.5..0.5);
            let params = ArmaLayerParams::scalar(p, q, alpha, &b, &g, Activation::Linear).unwrap();
            let out = arma_layer_forward(&params, &Tensor::new(vec![1000, 1], x.clone()).unwrap())
                .unwrap();
            worst = worst.max(max_abs_diff(out.data(), &scalar_recursion(alpha, &b, &g, &x)));
            cases += 1;
        }
    }
    let t = start.elapsed();
    r.check(
        "1",
        worst < 1e-12 && t < Duration::from_secs(10),
        format!("{cases} orders, 1000 steps, max |diff| = {worst:.3e} (< 1e-12), {}", secs(t)),
    );
}

fn rows_at(batch: &[Vec<f64>], k: usize, t: usize) -> Tensor {
    let data = batch.iter().flat_map(|w| w[t * k..(t + 1) * k].to_vec()).collect();
    Tensor::new(vec![batch.len(), k], data).unwrap()
}

fn series_mse(g: &mut Graph, spec: &NetworkSpec, ids: &[NodeId], batch: &[Vec<f64>]) -> Result<NodeId> {
    let k = spec.input_dim;
    let len = batch[0].len() / k;
    let x: Vec<NodeId> = (0..len).map(|t| g.constant(rows_at(batch, k, t))).collect();
    let outs = build_series(g, spec, ids, &x)?;
    let offset = len - outs.len();
    let mut total = None;
    for (r, &o) in outs.iter().enumerate() {
        let y = g.constant(rows_at(batch, k, r + offset));
        let d = g.sub(o, y);
        let sq = g.square(d);
        let s = g.sum(sq);
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s),
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / (outs.len() * batch.len() * k) as f64))
}

fn frame_bce(g: &mut Graph, spec: &NetworkSpec, ids: &[NodeId], seqs: &[Tensor], target: &Tensor) -> Result<NodeId> {
    let x: Vec<NodeId> = (0..seqs[0].shape()[0])
        .map(|t| {
            let frames: Vec<Tensor> = seqs.iter().map(|s| s.index_axis0(t)).collect();
            g.constant(Tensor::stack(&frames).unwrap())
        })
        .collect();
    let out = build_frames(g, spec, ids, &x)?.output;
    let y = g.constant(target.clone());
    let not_y = g.constant(target.map(|v| 1.0 - v));
    let ones = g.constant(Tensor::full(target.shape(), 1.0));
    let p = g.clip(out, 1e-7, 1.0 - 1e-7);
    let lp = g.log(p);
    let q = g.sub(ones, p);
    let lq = g.log(q);
    let a = g.mul(y, lp);
    let b = g.mul(not_y, lq);
    let s = g.add(a, b);
    let m = g.mean(s);
    Ok(g.scale(m, -1.0))
}

fn criterion_2(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut results = Vec::new();

    let arma = NetworkSpec::linear_cell(1, 2, 1);
    let mut deep = NetworkSpec::deep(2, 2, 1, 3);
    for layer in &mut deep.layers {
        if let LayerSpec::Arma(s) = layer {
            s.activations = vec![Activation::Tanh];
        }
    }
    for (name, spec) in [("ARMA(2,1)", arma), ("stacked 2-layer", deep)] {
        let params = init_params(&spec, 7).unwrap().trainable();
        let k = spec.input_dim;
        let batch: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut rng, 30 * k, 1.5)).collect();
        let rep = grad_check(|g, ids| series_mse(g, &spec, ids, &batch), &params, 1e-6, 1e-5)
            .unwrap();
        results.push((name, rep.max_rel_err, rep.pass, 1e-5));
    }

    let conv = NetworkSpec::conv(
        1,
        vec![ConvArmaSpec {
            p: 2,
            q: 1,
            filters: 2,
            kernel: [3, 3],
            activation: Activation::Tanh,
        }],
        false,
    );
    let params = init_params(&conv, 9).unwrap().trainable();
    let seqs: Vec<Tensor> = (0..2)
        .map(|_| Tensor::new(vec![6, 4, 4, 1], uniform(&mut rng, 96, 1.0)).unwrap())
        .collect();
    let target = Tensor::new(
        vec![2, 4, 4, 1],
        (0..32).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect(),
    )
    .unwrap();
    let rep = grad_check(|g, ids| frame_bce(g, &conv, ids, &seqs, &target), &params, 1e-6, 1e-4)
        .unwrap();
    results.push(("ConvARMA(2,1) 4×4 3×3", rep.max_rel_err, rep.pass, 1e-4));

    let t = start.elapsed();
    let pass = results.iter().all(|r| r.2) && t < Duration::from_secs(60);
    let detail: Vec<String> = results
        .iter()
        .map(|(n, e, _, tol)| format!("{n} rel err {e:.2e} (tol {tol:.0e})"))
        .collect();
    r.check("2", pass, format!("{}, {}", detail.join("; "), secs(t)));
}

fn recovery(r: &mut Report, id: &str, cfg: &str, out: &Path) -> Duration {
    let (code, t) = armacell("recover", &config(cfg), out, None);
    if code != 0 {
        r.check(id, false, format!("recover exited with {code}"));
        return t;
    }
    let rows = read_csv(&out.join("summary.csv"));
    let ok = rows.iter().filter(|s| s["recovered"] == "true").count();
    let worst: Vec<String> = rows.iter().map(|s| format!("{:.3}", s["max_deviation"].parse::<f64>().unwrap())).collect();
    r.check(
        id,
        rows.len() == 10 && ok >= 9,
        format!("{ok}/{} seeds within ±0.05 (per-seed max deviation {}), {}", rows.len(), worst.join(" "), secs(t)),
    );
    t
}

fn criterion_3(r: &mut Report, work: &Path) {
    let a = recovery(r, "3a", "recover_arma.json", &work.join("recover_arma"));
    let v = recovery(r, "3b", "recover_varma.json", &work.join("recover_varma"));
    let total = a + v;
    r.check(
        "3-runtime",
        total < Duration::from_secs(600),
        format!("ARMA + VARMA recovery {} (< 600s)", secs(total)),
    );
}

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for (p, q) in [(1, 1), (2, 1), (3, 2), (1, 3)] {
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w = uniform(&mut rng, p, 0.5);
        let u = uniform(&mut rng, q, 0.9 / q as f64);
        let alpha = rng.gen_range(-0.5..0.5);
        for act in [Activation::Linear, Activation::Tanh] {
            let mut conv = ConvArmaParams::zeros(
                &ConvArmaSpec {
                    p,
                    q,
                    filters: 1,
                    kernel: [1, 1],
                    activation: act,
                },
                1,
            )
            .unwrap();
            for (k, v) in conv.input_kernels.iter_mut().zip(&w) {
                *k = Tensor::full(&[1, 1, 1, 1], *v);
            }
            for (k, v) in conv.feedback_kernels.iter_mut().zip(&u) {
                *k = Tensor::full(&[1, 1, 1, 1], *v);
            }
            conv.bias = Tensor::vector(&[alpha]);
            let frames = Tensor::new(vec![500, 1, 1, 1], x.clone()).unwrap();
            let a = conv_arma_layer_forward(&conv, &frames, false).unwrap();
            // convolution feedback is added, the scalar cell subtracts: γ = −U
            let g: Vec<f64> = u.iter().map(|v| -v).collect();
            let mut lag = w.clone();
            lag.resize(p.max(q), 0.0);
            let cell = ArmaLayerParams::scalar(p, q, alpha, &lag, &g, act).unwrap();
            let b = arma_layer_forward(&cell, &Tensor::new(vec![500, 1], x.clone()).unwrap()).unwrap();
            worst = worst.max(max_abs_diff(a.data(), b.data()));
        }
    }
    r.check(
        "4",
        worst < 1e-12,
        format!("1×1 ConvARMA vs scalar cell (γ = −U), 500 steps, max |diff| = {worst:.3e} (< 1e-12)"),
    );
}

fn criterion_5(r: &mut Report, out: &Path) {
    let (code, t) = armacell("benchmark", &config("simulation_univariate.json"), out, None);
    if code != 0 {
        r.check("5", false, format!("benchmark exited with {code}"));
        return;
    }
    let (cells, failed) = rmse_by_cell(out);
    let get = |d: &str, m: &str| mean_sd(&cells[&(d.to_string(), m.to_string())]);
    let (nn, cl) = (get("arma", "ShallowARMA"), get("arma", "ClassicalARMA"));
    let rel = (nn.0 - cl.0).abs() / cl.0;
    r.check(
        "5a",
        rel <= 0.10 && failed == 0,
        format!("ARMA DGP mean RMSE ShallowARMA {:.4} vs classical {:.4}, rel diff {:.1}% (≤ 10%)", nn.0, cl.0, 100.0 * rel),
    );
    for d in ["sgn", "tar"] {
        let (nn, cl) = (get(d, "ShallowARMA"), get(d, "ClassicalARMA"));
        r.check(
            &format!("5b-{d}"),
            nn.0 < cl.0,
            format!("{} mean RMSE ShallowARMA {:.4} < classical {:.4}", d.to_uppercase(), nn.0, cl.0),
        );
    }
    r.check(
        "5c",
        nn.1 <= cl.1,
        format!("ARMA DGP RMSE std ShallowARMA {:.4} ≤ classical {:.4}", nn.1, cl.1),
    );
    r.check(
        "5-runtime",
        t < Duration::from_secs(1800) && failed == 0,
        format!("{} (< 1800s), {failed} failed jobs", secs(t)),
    );
}

fn criterion_6(r: &mut Report, out: &Path) {
    let (code, t) = armacell("benchmark", &config("simulation_multivariate.json"), out, None);
    if code != 0 {
        r.check("6", false, format!("benchmark exited with {code}"));
        return;
    }
    let (cells, failed) = rmse_by_cell(out);
    for d in ["sq", "exp"] {
        let nn = mean_sd(&cells[&(d.to_string(), "ShallowARMA".to_string())]);
        let cl = mean_sd(&cells[&(d.to_string(), "ClassicalARMA".to_string())]);
        r.check(
            &format!("6-{d}"),
            nn.0 <= cl.0,
            format!("{} mean RMSE ShallowARMA {:.4} ≤ classical VARMA {:.4}", d.to_uppercase(), nn.0, cl.0),
        );
    }
    r.check(
        "6-runtime",
        t < Duration::from_secs(1200) && failed == 0,
        format!("{} (< 1200s), {failed} failed jobs", secs(t)),
    );
}

fn criterion_7(r: &mut Report, out: &Path) {
    let (code, t) = armacell("benchmark", &config("video.json"), out, None);
    if code != 0 {
        r.check("7", false, format!("benchmark exited with {code}"));
        return;
    }
    let (cells, _) = rmse_by_cell(out);
    let key = |m: &str| ("noisy_squares".to_string(), m.to_string());
    let conv = mean_sd(&cells[&key("ConvARMA")]).0;
    let base = mean_sd(&cells[&key("RepeatLastFrame")]).0;
    r.check(
        "7",
        conv < 0.5 * base && (0.5..=2.0).contains(&base) && t < Duration::from_secs(1200),
        format!(
            "test BCE ConvARMA {conv:.4} vs repeat-last-frame {base:.4} (ratio {:.3} < 0.5, baseline in [0.5, 2]), {}",
            conv / base,
            secs(t)
        ),
    );
}

fn same_bytes(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() || !a.join(f).exists())
        .map(|f| f.to_string())
        .collect()
}

fn criterion_8(r: &mut Report, work: &Path) {
    let first = work.join("recover_arma");
    let again = work.join("recover_arma_again");
    let (code, _) = armacell("recover", &config("recover_arma.json"), &again, Some("1"));
    let mut diffs = if code == 0 {
        same_bytes(&first, &again, &["recovery.csv", "summary.csv", "seed3/trajectory.csv"])
    } else {
        vec![format!("recover exited with {code}")]
    };

    let (a, b) = (work.join("floor_a"), work.join("floor_b"));
    for (out, threads) in [(&a, None), (&b, Some("1"))] {
        for cmd in ["train", "evaluate"] {
            let (code, _) = armacell(cmd, &config("noise_floor.json"), out, threads);
            if code != 0 {
                diffs.push(format!("{cmd} exited with {code}"));
            }
        }
    }
    diffs.extend(same_bytes(&a, &b, &["metrics.csv", "seed0/leaderboard.csv", "seed0/history.csv"]));
    r.check(
        "8",
        diffs.is_empty(),
        if diffs.is_empty() {
            "recover and train/evaluate reruns produce byte-identical CSVs".into()
        } else {
            format!("differing outputs: {}", diffs.join(", "))
        },
    );
}

fn criterion_9(r: &mut Report, work: &Path) {
    let rows = read_csv(&work.join("floor_a/metrics.csv"));
    let rmse: f64 = rows
        .iter()
        .find(|row| row["metric"] == "rmse")
        .map(|row| row["value"].parse().unwrap())
        .unwrap_or(f64::NAN);
    let mse = rmse * rmse;
    r.check(
        "9",
        (mse - 1.0).abs() <= 0.05,
        format!("AR(1), 10000 steps: linear ARMA(1,0) test MSE {mse:.4} vs σ² = 1 (within 5%)"),
    );
}

fn main() {
    // `cargo test -- --list` and filters: this target has no sub-tests to select
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let dir = tempfile::TempDir::new().unwrap();
    let work = dir.path();
    let mut report = Report { lines: Vec::new() };
    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_4(&mut report);
    criterion_3(&mut report, work);
    criterion_5(&mut report, &work.join("univariate"));
    criterion_6(&mut report, &work.join("multivariate"));
    criterion_7(&mut report, &work.join("video"));
    criterion_8(&mut report, work);
    criterion_9(&mut report, work);

    let passed = report.lines.iter().filter(|l| l.1).count();
    println!("{passed}/{} criteria pass or are known red", report.lines.len());
    if passed != report.lines.len() {
        std::process::exit(1);
    }
}
