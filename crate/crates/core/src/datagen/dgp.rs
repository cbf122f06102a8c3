use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x_t = α + Σ β_i x_{t−i} + Σ γ_j ε_{t−j} + ε_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmaProcess {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for ArmaProcess {
    fn default() -> Self {
        ArmaProcess {
            alpha: 0.0,
            beta: vec![0.1, 0.3],
            gamma: vec![-0.4],
        }
    }
}

/// Two-regime threshold autoregression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TarProcess {
    pub threshold: f64,
    /// Coefficient while `|x_{t−1}| <= threshold`.
    pub inner: f64,
    pub outer: f64,
}

impl Default for TarProcess {
    fn default() -> Self {
        TarProcess {
            threshold: 1.0,
            inner: 0.9,
            outer: -0.3,
        }
    }
}

/// `x_t = scale·|x_{t−1}| / |x_{t−1} + shift| + ε_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarProcess {
    pub scale: f64,
    pub shift: f64,
}

impl Default for NarProcess {
    fn default() -> Self {
        NarProcess {
            scale: 0.7,
            shift: 2.0,
        }
    }
}

/// `x_t = ε_t + γ_1 ε_{t−1} + γ_2 ε_{t−2} + cross·ε_t ε_{t−2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeteroMa2Process {
    pub gamma1: f64,
    pub gamma2: f64,
    pub cross: f64,
}

impl Default for HeteroMa2Process {
    fn default() -> Self {
        HeteroMa2Process {
            gamma1: -0.4,
            gamma2: 0.3,
            cross: 0.5,
        }
    }
}

/// `𝐱_t = 𝛂 + Σ B_i 𝐱_{t−i} + Σ Γ_j 𝛆_{t−j} + 𝛆_t` with identity noise covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarmaProcess {
    pub alpha: Vec<f64>,
    /// Row-major `k×k` matrices.
    pub b: Vec<Vec<Vec<f64>>>,
    pub gamma: Vec<Vec<Vec<f64>>>,
}

impl Default for VarmaProcess {
    fn default() -> Self {
        VarmaProcess {
            alpha: vec![0.0, 0.0],
            b: vec![vec![vec![0.1, -0.2], vec![-0.2, 0.1]]],
            gamma: vec![vec![vec![-0.4, 0.2], vec![0.2, -0.4]]],
        }
    }
}

impl VarmaProcess {
    fn validate(&self) -> Result<()> {
        let k = self.alpha.len();
        if k == 0 {
            return Err(Error::invalid("VARMA needs a non-empty alpha"));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == k);
        if !self.b.iter().chain(&self.gamma).all(square) {
            return Err(Error::invalid(format!("VARMA matrices must be {k}×{k}")));
        }
        Ok(())
    }
}

/// First component AR(1), second a transform of the first plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledProcess {
    pub ar: f64,
}

impl Default for CoupledProcess {
    fn default() -> Self {
        CoupledProcess { ar: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Process {
    Arma(ArmaProcess),
    Tar(TarProcess),
    Sgn,
    Nar(NarProcess),
    HeteroMa2(HeteroMa2Process),
    Varma(VarmaProcess),
    /// `x_{t,2} = x_{t,1}² + ε_{t,2}`.
    Sq(CoupledProcess),
    /// `x_{t,2} = exp(x_{t,1}) + ε_{t,2}`.
    Exp(CoupledProcess),
}

impl Process {
    pub fn dim(&self) -> usize {
        match self {
            Process::Varma(v) => v.alpha.len(),
            Process::Sq(_) | Process::Exp(_) => 2,
            _ => 1,
        }
    }

    /// Lags of `x` and `ε` the process looks back at.
    fn memory(&self) -> usize {
        match self {
            Process::Arma(a) => a.beta.len().max(a.gamma.len()),
            Process::Varma(v) => v.b.len().max(v.gamma.len()),
            Process::HeteroMa2(_) => 2,
            _ => 1,
        }
        .max(1)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Process::Arma(_) => "arma",
            Process::Tar(_) => "tar",
            Process::Sgn => "sgn",
            Process::Nar(_) => "nar",
            Process::HeteroMa2(_) => "hetero_ma2",
            Process::Varma(_) => "varma",
            Process::Sq(_) => "sq",
            Process::Exp(_) => "exp",
        }
    }

    /// Next observation. `past_x[i]` and `past_eps[i]` are the values `i + 1`
    /// steps back; `eps` is the current innovation.
    pub fn step(&self, past_x: &[Vec<f64>], past_eps: &[Vec<f64>], eps: &[f64]) -> Vec<f64> {
        let x1 = |i: usize| past_x.get(i).map_or(0.0, |v| v[0]);
        let e1 = |i: usize| past_eps.get(i).map_or(0.0, |v| v[0]);
        match self {
            Process::Arma(a) => {
                let ar: f64 = a.beta.iter().enumerate().map(|(i, b)| b * x1(i)).sum();
                let ma: f64 = a.gamma.iter().enumerate().map(|(j, g)| g * e1(j)).sum();
                vec![a.alpha + ar + ma + eps[0]]
            }
            Process::Tar(t) => {
                let prev = x1(0);
                let coef = if prev.abs() <= t.threshold {
                    t.inner
                } else {
                    t.outer
                };
                vec![coef * prev + eps[0]]
            }
            Process::Sgn => {
                let prev = x1(0);
                let s = if prev > 0.0 {
                    1.0
                } else if prev < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                vec![s + eps[0]]
            }
            Process::Nar(n) => {
                let prev = x1(0);
                vec![n.scale * prev.abs() / (prev + n.shift).abs() + eps[0]]
            }
            Process::HeteroMa2(h) => {
                vec![eps[0] + h.gamma1 * e1(0) + h.gamma2 * e1(1) + h.cross * eps[0] * e1(1)]
            }
            Process::Varma(v) => {
                let k = v.alpha.len();
                let mut out: Vec<f64> = v.alpha.iter().zip(eps).map(|(a, e)| a + e).collect();
                let mut accumulate = |mats: &[Vec<Vec<f64>>], hist: &[Vec<f64>]| {
                    for (m, lagged) in mats.iter().zip(hist) {
                        for (r, o) in out.iter_mut().enumerate().take(k) {
                            *o += m[r].iter().zip(lagged).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                };
                accumulate(&v.b, past_x);
                accumulate(&v.gamma, past_eps);
                out
            }
            Process::Sq(c) => {
                let first = c.ar * x1(0) + eps[0];
                vec![first, first * first + eps[1]]
            }
            Process::Exp(c) => {
                let first = c.ar * x1(0) + eps[0];
                vec![first, first.exp() + eps[1]]
            }
        }
    }
}

fn default_noise() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    200
}

/// A generating process with its noise scale and burn-in length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub process: Process,
    /// Standard deviation of the Gaussian innovations.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl DgpSpec {
    pub fn new(process: Process) -> Self {
        DgpSpec {
            process,
            noise: default_noise(),
            burn_in: default_burn_in(),
        }
    }

    pub fn dim(&self) -> usize {
        self.process.dim()
    }
}

/// Generator seeded with `seed` and positioned on stream `stream`, so that
/// independent series can be drawn in any order or in parallel.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `burn_in + n` steps from zero initial conditions and returns the
/// last `n` as `[n × k]`.
pub fn simulate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Tensor> {
    simulate_stream(spec, n, seed, 0)
}

/// [`simulate`] on an explicit stream of the seed.
pub fn simulate_stream(spec: &DgpSpec, n: usize, seed: u64, stream: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::invalid("simulate needs n >= 1"));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::invalid(format!(
            "noise std must be finite and >= 0, got {}",
            spec.noise
        )));
    }
    if let Process::Varma(v) = &spec.process {
        v.validate()?;
    }
    let k = spec.dim();
    let mem = spec.process.memory();
    let mut rng = stream_rng(seed, stream);
    let mut past_x: Vec<Vec<f64>> = Vec::with_capacity(mem + 1);
    let mut past_eps: Vec<Vec<f64>> = Vec::with_capacity(mem + 1);
    let mut out = Vec::with_capacity(n * k);
    for t in 0..spec.burn_in + n {
        let eps: Vec<f64> = (0..k)
            .map(|_| spec.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = spec.process.step(&past_x, &past_eps, &eps);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} process diverged at step {t}",
                spec.process.name()
            )));
        }
        if t >= spec.burn_in {
            out.extend_from_slice(&x);
        }
        past_x.insert(0, x);
        past_eps.insert(0, eps);
        past_x.truncate(mem);
        past_eps.truncate(mem);
    }
    Tensor::new(vec![n, k], out)
}
