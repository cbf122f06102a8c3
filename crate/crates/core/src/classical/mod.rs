//! Classical (V)ARMA estimation by conditional sum of squares, used as the
//! baseline the networks are compared against and as the reference for
//! parameter recovery.
//!
//! The model is `𝐱_t = 𝛂 + Σ B_i 𝐱_{t−i} + Σ Γ_j 𝛆_{t−j} + 𝛆_t`. A univariate
//! series is the `k = 1` case.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::arma::ArmaLayerParams;
use crate::datagen::stream_rng;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Activation, Tensor};
use crate::training::optim::{adam_step, AdamConfig, AdamState};

/// Row-major square matrix.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmaCoefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<Matrix>,
    pub gamma: Vec<Matrix>,
    /// Innovation covariance; all zeros when unknown.
    pub sigma2: Matrix,
}

fn zeros(k: usize) -> Matrix {
    vec![vec![0.0; k]; k]
}

impl ArmaCoefficients {
    pub fn univariate(alpha: f64, beta: &[f64], gamma: &[f64]) -> Self {
        ArmaCoefficients {
            alpha: vec![alpha],
            beta: beta.iter().map(|&b| vec![vec![b]]).collect(),
            gamma: gamma.iter().map(|&g| vec![vec![g]]).collect(),
            sigma2: zeros(1),
        }
    }

    pub fn zeros(k: usize, p: usize, q: usize) -> Self {
        ArmaCoefficients {
            alpha: vec![0.0; k],
            beta: vec![zeros(k); p],
            gamma: vec![zeros(k); q],
            sigma2: zeros(k),
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn lags(&self) -> usize {
        self.p().max(self.q())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.dim();
        if k == 0 {
            return Err(Error::invalid("coefficients need k >= 1"));
        }
        let ok = |m: &Matrix| m.len() == k && m.iter().all(|r| r.len() == k);
        if !self.beta.iter().chain(&self.gamma).all(ok) || !ok(&self.sigma2) {
            return Err(Error::invalid(format!(
                "coefficient matrices must be {k}×{k}"
            )));
        }
        Ok(())
    }

    /// Flat layout: α, then each `B_i`, then each `Γ_j`, row-major.
    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        for m in self.beta.iter().chain(&self.gamma) {
            for row in m {
                v.extend_from_slice(row);
            }
        }
        v
    }

    fn from_flat(k: usize, p: usize, q: usize, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let alpha: Vec<f64> = it.by_ref().take(k).collect();
        let mut mat = || -> Matrix { (0..k).map(|_| it.by_ref().take(k).collect()).collect() };
        let beta = (0..p).map(|_| mat()).collect();
        let gamma = (0..q).map(|_| mat()).collect();
        ArmaCoefficients {
            alpha,
            beta,
            gamma,
            sigma2: zeros(k),
        }
    }
}

fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64], sign: f64) {
    let k = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += sign
            * m[r * k..(r + 1) * k]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>();
    }
}

fn check_series(series: &Tensor, k: usize, lags: usize) -> Result<usize> {
    let &[t_len, width] = series.shape() else {
        return Err(Error::invalid(format!(
            "series must be [T × k], got {:?}",
            series.shape()
        )));
    };
    if width != k {
        return Err(Error::ShapeMismatch {
            op: "series width",
            left: vec![t_len, k],
            right: series.shape().to_vec(),
        });
    }
    if t_len <= lags {
        return Err(Error::SeriesTooShort {
            required: lags + 1,
            got: t_len,
        });
    }
    Ok(t_len)
}

/// Flat parameters together with the series they are fitted to.
struct Css<'a> {
    x: &'a [f64],
    t_len: usize,
    k: usize,
    p: usize,
    q: usize,
}

impl Css<'_> {
    fn m(&self) -> usize {
        self.p.max(self.q)
    }

    fn n_params(&self) -> usize {
        self.k + (self.p + self.q) * self.k * self.k
    }

    /// Residuals `e_t` for every `t`, zero before `max(p, q)`.
    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let (k, m, kk) = (self.k, self.m(), self.k * self.k);
        let b = &theta[k..k + self.p * kk];
        let g = &theta[k + self.p * kk..];
        let mut e = vec![0.0; self.t_len * k];
        for t in m..self.t_len {
            let (done, rest) = e.split_at_mut(t * k);
            let r = &mut rest[..k];
            for (c, v) in r.iter_mut().enumerate() {
                *v = self.x[t * k + c] - theta[c];
            }
            for i in 0..self.p {
                matvec_add(
                    r,
                    &b[i * kk..(i + 1) * kk],
                    &self.x[(t - i - 1) * k..(t - i) * k],
                    -1.0,
                );
            }
            for j in 0..self.q {
                if t - j - 1 >= m {
                    matvec_add(
                        r,
                        &g[j * kk..(j + 1) * kk],
                        &done[(t - j - 1) * k..(t - j) * k],
                        -1.0,
                    );
                }
            }
        }
        e
    }

    fn scale(&self) -> f64 {
        1.0 / ((self.t_len - self.m()) * self.k) as f64
    }

    fn loss_of(&self, e: &[f64]) -> f64 {
        self.scale() * e.iter().map(|v| v * v).sum::<f64>()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.loss_of(&self.residuals(theta))
    }

    /// Loss and gradient; the gradient runs the residual recursion backwards.
    fn loss_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (k, m, kk) = (self.k, self.m(), self.k * self.k);
        let e = self.residuals(theta);
        let g_off = k + self.p * kk;
        let g = &theta[g_off..];
        let mut lam = vec![0.0; self.t_len * k];
        let mut grad = vec![0.0; self.n_params()];
        let two_over_n = 2.0 * self.scale();
        for t in (m..self.t_len).rev() {
            let (head, later) = lam.split_at_mut((t + 1) * k);
            let l = &mut head[t * k..];
            for (lc, ev) in l.iter_mut().zip(&e[t * k..(t + 1) * k]) {
                *lc = two_over_n * ev;
            }
            for j in 0..self.q.min(self.t_len - t - 1) {
                // λ_t −= Γ_jᵀ λ_{t+j}
                let lj = &later[j * k..(j + 1) * k];
                let gm = &g[j * kk..(j + 1) * kk];
                for (c, lc) in l.iter_mut().enumerate() {
                    *lc -= (0..k).map(|r| gm[r * k + c] * lj[r]).sum::<f64>();
                }
            }
            for r in 0..k {
                grad[r] -= l[r];
                for i in 0..self.p {
                    let xl = &self.x[(t - i - 1) * k..(t - i) * k];
                    for c in 0..k {
                        grad[k + i * kk + r * k + c] -= l[r] * xl[c];
                    }
                }
                for j in 0..self.q {
                    if t - j - 1 >= m {
                        let el = &e[(t - j - 1) * k..(t - j) * k];
                        for c in 0..k {
                            grad[g_off + j * kk + r * k + c] -= l[r] * el[c];
                        }
                    }
                }
            }
        }
        (self.loss_of(&e), grad)
    }
}

/// Conditional-sum-of-squares objective: mean squared one-step residual
/// over `t >= max(p, q)` with zero pre-sample residuals.
pub fn css_objective(coefs: &ArmaCoefficients, series: &Tensor) -> Result<f64> {
    coefs.validate()?;
    let t_len = check_series(series, coefs.dim(), coefs.lags())?;
    let css = Css {
        x: series.data(),
        t_len,
        k: coefs.dim(),
        p: coefs.p(),
        q: coefs.q(),
    };
    Ok(css.loss(&coefs.to_flat()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CssConfig {
    pub adam: AdamConfig,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
    /// Stop once the relative improvement stays below this for 20 steps.
    pub rel_tol: f64,
}

impl Default for CssConfig {
    fn default() -> Self {
        CssConfig {
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            max_iter: 5000,
            starts: 5,
            seed: 0,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: usize,
    pub css: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CssFit {
    pub coefs: ArmaCoefficients,
    pub css: f64,
    pub iterations: usize,
    /// Objective after each accepted step of the winning start.
    pub trajectory: Vec<f64>,
    pub starts: Vec<StartOutcome>,
    /// Post-hoc stationarity and invertibility findings.
    pub warnings: Vec<String>,
}

struct Run {
    theta: Vec<f64>,
    loss: f64,
    trajectory: Vec<f64>,
}

fn run_start(css: &Css, theta0: Vec<f64>, cfg: &CssConfig) -> Result<Run> {
    let mut theta = Tensor::vector(&theta0);
    let (mut loss, mut grad) = css.loss_and_grad(theta.data());
    if !loss.is_finite() {
        return Err(Error::NonFinite("initial CSS objective".into()));
    }
    let mut state = AdamState::new(std::slice::from_ref(&theta));
    let mut adam = cfg.adam;
    let mut trajectory = vec![loss];
    let mut stalled = 0;
    for _ in 0..cfg.max_iter {
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("CSS gradient".into()));
        }
        // Backtracking: a step that raises the objective is discarded and
        // retried from the same moments with half the learning rate.
        let accepted = loop {
            let mut cand = vec![theta.clone()];
            let mut cand_state = state.clone();
            adam_step(&mut cand, &[Tensor::vector(&grad)], &mut cand_state, &adam)?;
            let cand_loss = css.loss(cand[0].data());
            if cand_loss.is_finite() && cand_loss <= loss {
                break Some((cand.pop().expect("one"), cand_state, cand_loss));
            }
            adam.lr *= 0.5;
            if adam.lr < 1e-14 {
                break None;
            }
        };
        let Some((next, next_state, next_loss)) = accepted else {
            if state.t == 0 {
                break;
            }
            // stale momentum points uphill; restart the moments before giving up
            state = AdamState::new(std::slice::from_ref(&theta));
            adam.lr = cfg.adam.lr;
            continue;
        };
        // let the step size recover after a run of rejections
        adam.lr = (adam.lr * 1.25).min(cfg.adam.lr);
        let improvement = (loss - next_loss) / loss.abs().max(f64::MIN_POSITIVE);
        theta = next;
        state = next_state;
        (loss, grad) = css.loss_and_grad(theta.data());
        debug_assert!((loss - next_loss).abs() <= 1e-12 * loss.abs().max(1.0));
        trajectory.push(loss);
        stalled = if improvement < cfg.rel_tol {
            stalled + 1
        } else {
            0
        };
        if stalled >= 20 {
            break;
        }
    }
    Ok(Run {
        theta: theta.into_data(),
        loss,
        trajectory,
    })
}

/// Fits a (V)ARMA(p, q) by minimizing the CSS objective with backtracking
/// Adam from several starts (the first at zero, the rest random), keeping
/// the best.
pub fn fit_css(series: &Tensor, p: usize, q: usize) -> Result<CssFit> {
    fit_css_with(series, p, q, &CssConfig::default())
}

pub fn fit_css_with(series: &Tensor, p: usize, q: usize, cfg: &CssConfig) -> Result<CssFit> {
    if series.rank() != 2 {
        return Err(Error::invalid(format!(
            "series must be [T × k], got {:?}",
            series.shape()
        )));
    }
    if cfg.starts == 0 {
        return Err(Error::invalid("need at least one start"));
    }
    let k = series.shape()[1];
    let t_len = check_series(series, k, p.max(q))?;
    let css = Css {
        x: series.data(),
        t_len,
        k,
        p,
        q,
    };
    let starts: Vec<usize> = (0..cfg.starts).collect();
    let runs = parallel::map(&starts, |&s| {
        let theta0: Vec<f64> = if s == 0 {
            vec![0.0; css.n_params()]
        } else {
            let mut rng = stream_rng(cfg.seed, s as u64);
            (0..css.n_params())
                .map(|i| if i < k { 0.0 } else { rng.gen_range(-0.3..0.3) })
                .collect()
        };
        run_start(&css, theta0, cfg)
    });
    let outcomes: Vec<StartOutcome> = runs
        .iter()
        .enumerate()
        .map(|(start, r)| match r {
            Ok(run) => StartOutcome {
                start,
                css: Some(run.loss),
                error: None,
            },
            Err(e) => StartOutcome {
                start,
                css: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = runs
        .into_iter()
        .filter_map(|r| r.ok())
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .ok_or_else(|| Error::AllFailed {
            attempts: cfg.starts,
            reasons: outcomes
                .iter()
                .filter_map(|o| o.error.clone())
                .collect::<Vec<_>>()
                .join("; "),
        })?;
    let mut coefs = ArmaCoefficients::from_flat(k, p, q, &best.theta);
    let e = css.residuals(&best.theta);
    let n = (t_len - css.m()) as f64;
    for r in 0..k {
        for c in 0..k {
            coefs.sigma2[r][c] = (css.m()..t_len)
                .map(|t| e[t * k + r] * e[t * k + c])
                .sum::<f64>()
                / n;
        }
    }
    Ok(CssFit {
        warnings: root_warnings(&coefs),
        iterations: best.trajectory.len() - 1,
        css: best.loss,
        trajectory: best.trajectory,
        coefs,
        starts: outcomes,
    })
}

/// Block companion matrix whose first block row is `sign · M_i`.
fn companion(mats: &[Matrix], sign: f64) -> Vec<Vec<f64>> {
    let k = mats[0].len();
    let n = k * mats.len();
    let mut a = vec![vec![0.0; n]; n];
    for (i, m) in mats.iter().enumerate() {
        for r in 0..k {
            for c in 0..k {
                a[r][i * k + c] = sign * m[r][c];
            }
        }
    }
    for r in k..n {
        a[r][r - k] = 1.0;
    }
    a
}

/// Spectral radius from `‖A^1024‖^(1/1024)`, computed by rescaled squaring.
fn spectral_radius(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut log_scale = 0.0;
    for _ in 0..10 {
        let mut sq = vec![vec![0.0; n]; n];
        for r in 0..n {
            for k in 0..n {
                let v = m[r][k];
                if v != 0.0 {
                    for c in 0..n {
                        sq[r][c] += v * m[k][c];
                    }
                }
            }
        }
        log_scale *= 2.0;
        let s = sq.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if s == 0.0 {
            return 0.0;
        }
        for v in sq.iter_mut().flatten() {
            *v /= s;
        }
        log_scale += s.ln();
        m = sq;
    }
    let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    ((log_scale + norm.ln()) / 1024.0).exp()
}

fn root_warnings(coefs: &ArmaCoefficients) -> Vec<String> {
    let mut out = Vec::new();
    if coefs.p() > 0 {
        let rho = spectral_radius(&companion(&coefs.beta, 1.0));
        if rho >= 1.0 {
            out.push(format!(
                "autoregressive part is not stationary (spectral radius {rho:.4})"
            ));
        }
    }
    if coefs.q() > 0 {
        let rho = spectral_radius(&companion(&coefs.gamma, -1.0));
        if rho >= 1.0 {
            out.push(format!(
                "moving-average part is not invertible (spectral radius {rho:.4})"
            ));
        }
    }
    out
}

/// One-step predictions for `t = max(p,q) .. T`, `[(T − max(p,q)) × k]`.
/// Residuals are computed recursively with the predictions before
/// `max(p,q)` taken as zero, the same start-up as the ARMA cell.
pub fn forecast(coefs: &ArmaCoefficients, series: &Tensor) -> Result<Tensor> {
    coefs.validate()?;
    let (k, m) = (coefs.dim(), coefs.lags());
    let t_len = check_series(series, k, m)?;
    let x = series.data();
    let flat = coefs.to_flat();
    let kk = k * k;
    let (b, g) = flat[k..].split_at(coefs.p() * kk);
    let mut preds = vec![0.0; t_len * k];
    for t in m..t_len {
        let mut v = coefs.alpha.clone();
        for i in 0..coefs.p() {
            matvec_add(
                &mut v,
                &b[i * kk..(i + 1) * kk],
                &x[(t - i - 1) * k..(t - i) * k],
                1.0,
            );
        }
        for j in 0..coefs.q() {
            let s = t - j - 1;
            let e: Vec<f64> = (0..k).map(|c| x[s * k + c] - preds[s * k + c]).collect();
            matvec_add(&mut v, &g[j * kk..(j + 1) * kk], &e, 1.0);
        }
        preds[t * k..(t + 1) * k].copy_from_slice(&v);
    }
    Tensor::new(vec![t_len - m, k], preds.split_off(m * k))
}

fn to_tensor(m: &Matrix) -> Tensor {
    Tensor::from_rows(m).expect("validated square matrix")
}

fn to_matrix(t: &Tensor) -> Matrix {
    let k = t.shape()[1];
    t.data().chunks(k).map(|r| r.to_vec()).collect()
}

/// Moves the moving-average terms into the cell's lag weights:
/// `B̆_i = B_i + Γ_i` (a missing term counts as zero) and feedback `Γ_j`.
/// The result is a linear `k`-unit layer with `k` inputs.
pub fn fold(coefs: &ArmaCoefficients) -> Result<ArmaLayerParams> {
    coefs.validate()?;
    let k = coefs.dim();
    if coefs.lags() == 0 {
        return Err(Error::invalid("folding needs p > 0 or q > 0"));
    }
    let lag_weights = (0..coefs.lags())
        .map(|i| {
            let mut m = zeros(k);
            for src in [coefs.beta.get(i), coefs.gamma.get(i)]
                .into_iter()
                .flatten()
            {
                for r in 0..k {
                    for c in 0..k {
                        m[r][c] += src[r][c];
                    }
                }
            }
            to_tensor(&m)
        })
        .collect();
    let params = ArmaLayerParams {
        p: coefs.p(),
        q: coefs.q(),
        in_dim: k,
        units: k,
        lag_weights,
        feedback_weights: coefs.gamma.iter().map(to_tensor).collect(),
        bias: Tensor::vector(&coefs.alpha),
        activations: vec![Activation::Linear; k],
        diagonal_feedback: false,
    };
    params.validate()?;
    Ok(params)
}

/// Inverse of [`fold`]: `B_i = B̆_i − Γ_i` for `i <= p`. The innovation
/// covariance is not recoverable and comes back as zeros.
pub fn unfold(params: &ArmaLayerParams) -> Result<ArmaCoefficients> {
    params.validate()?;
    if params.units != params.in_dim {
        return Err(Error::invalid(
            "unfold needs a square layer (units == in_dim)",
        ));
    }
    let gamma: Vec<Matrix> = params.feedback_weights.iter().map(to_matrix).collect();
    let beta = (0..params.p)
        .map(|i| {
            let mut m = to_matrix(&params.lag_weights[i]);
            if let Some(g) = gamma.get(i) {
                for (row, grow) in m.iter_mut().zip(g) {
                    for (v, gv) in row.iter_mut().zip(grow) {
                        *v -= gv;
                    }
                }
            }
            m
        })
        .collect();
    Ok(ArmaCoefficients {
        alpha: params.bias.data().to_vec(),
        beta,
        gamma,
        sigma2: zeros(params.units),
    })
}

#[cfg(test)]
mod tests;
