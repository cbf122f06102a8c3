//! The ARMA cell and its multi-unit layer.
//!
//! One step computes, per unit,
//!
//! ```text
//! x̂_t = σ( α + Σ_{i=1}^{max(p,q)} B̆_i x_{t−i} − Σ_{j=1}^{q} Γ_j x̂_{t−j} )
//! ```
//!
//! where `B̆_i` are `[units × in_dim]` lag weights, `Γ_j` are `[units × units]`
//! feedback weights over the layer's own previous outputs and `σ` is chosen
//! per unit. With one unit, one input and a linear activation this is the
//! ARMA(p, q) one-step predictor with the moving-average coefficients folded
//! into the lag weights.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

/// Architecture of one ARMA layer; weights live in [`ArmaLayerParams`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmaLayerSpec {
    pub p: usize,
    pub q: usize,
    pub units: usize,
    /// Either one activation shared by all units, or one per unit.
    pub activations: Vec<Activation>,
    /// Restrict each feedback matrix to its diagonal (units only see their own past).
    #[serde(default)]
    pub diagonal_feedback: bool,
}

impl ArmaLayerSpec {
    pub fn linear(p: usize, q: usize, units: usize) -> Self {
        ArmaLayerSpec {
            p,
            q,
            units,
            activations: vec![Activation::Linear],
            diagonal_feedback: false,
        }
    }

    /// First unit linear, the rest ReLU.
    pub fn hybrid(p: usize, q: usize, units: usize) -> Self {
        let mut activations = vec![Activation::Relu; units];
        activations[0] = Activation::Linear;
        ArmaLayerSpec {
            p,
            q,
            units,
            activations,
            diagonal_feedback: false,
        }
    }

    pub fn lags(&self) -> usize {
        self.p.max(self.q)
    }

    pub fn unit_activations(&self) -> Vec<Activation> {
        if self.activations.len() == 1 {
            vec![self.activations[0]; self.units]
        } else {
            self.activations.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(Error::invalid("ARMA layer needs at least one unit"));
        }
        if self.lags() == 0 {
            return Err(Error::invalid("ARMA layer needs p > 0 or q > 0"));
        }
        if self.activations.len() != 1 && self.activations.len() != self.units {
            return Err(Error::invalid(format!(
                "{} activations for {} units",
                self.activations.len(),
                self.units
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmaLayerParams {
    pub p: usize,
    pub q: usize,
    pub in_dim: usize,
    pub units: usize,
    /// `max(p, q)` matrices of shape `[units × in_dim]`; entry `i` multiplies `x_{t−i−1}`.
    pub lag_weights: Vec<Tensor>,
    /// `q` matrices of shape `[units × units]`; entry `j` multiplies `x̂_{t−j−1}`.
    pub feedback_weights: Vec<Tensor>,
    /// Shape `[units]`.
    pub bias: Tensor,
    /// One per unit.
    pub activations: Vec<Activation>,
    pub diagonal_feedback: bool,
}

impl ArmaLayerParams {
    pub fn zeros(spec: &ArmaLayerSpec, in_dim: usize) -> Result<Self> {
        spec.validate()?;
        let u = spec.units;
        Ok(ArmaLayerParams {
            p: spec.p,
            q: spec.q,
            in_dim,
            units: u,
            lag_weights: vec![Tensor::zeros(&[u, in_dim]); spec.lags()],
            feedback_weights: vec![Tensor::zeros(&[u, u]); spec.q],
            bias: Tensor::zeros(&[u]),
            activations: spec.unit_activations(),
            diagonal_feedback: spec.diagonal_feedback,
        })
    }

    /// Single-unit, single-input layer from scalar weights.
    pub fn scalar(
        p: usize,
        q: usize,
        alpha: f64,
        lag_weights: &[f64],
        feedback_weights: &[f64],
        activation: Activation,
    ) -> Result<Self> {
        let params = ArmaLayerParams {
            p,
            q,
            in_dim: 1,
            units: 1,
            lag_weights: lag_weights
                .iter()
                .map(|&w| Tensor::full(&[1, 1], w))
                .collect(),
            feedback_weights: feedback_weights
                .iter()
                .map(|&w| Tensor::full(&[1, 1], w))
                .collect(),
            bias: Tensor::vector(&[alpha]),
            activations: vec![activation],
            diagonal_feedback: false,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn lags(&self) -> usize {
        self.p.max(self.q)
    }

    pub fn spec(&self) -> ArmaLayerSpec {
        ArmaLayerSpec {
            p: self.p,
            q: self.q,
            units: self.units,
            activations: self.activations.clone(),
            diagonal_feedback: self.diagonal_feedback,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (u, k) = (self.units, self.in_dim);
        if self.lag_weights.len() != self.lags() {
            return Err(Error::invalid(format!(
                "expected {} lag weight matrices, got {}",
                self.lags(),
                self.lag_weights.len()
            )));
        }
        if self.feedback_weights.len() != self.q {
            return Err(Error::invalid(format!(
                "expected {} feedback matrices, got {}",
                self.q,
                self.feedback_weights.len()
            )));
        }
        for w in &self.lag_weights {
            if w.shape() != [u, k] {
                return Err(shape_err("lag weight", &[u, k], w.shape()));
            }
        }
        for w in &self.feedback_weights {
            if w.shape() != [u, u] {
                return Err(shape_err("feedback weight", &[u, u], w.shape()));
            }
        }
        if self.bias.shape() != [u] {
            return Err(shape_err("bias", &[u], self.bias.shape()));
        }
        if self.activations.len() != u {
            return Err(Error::invalid(format!(
                "{} activations for {u} units",
                self.activations.len()
            )));
        }
        Ok(())
    }

    fn feedback(&self, j: usize, row: usize, col: usize) -> f64 {
        if self.diagonal_feedback && row != col {
            0.0
        } else {
            self.feedback_weights[j].data()[row * self.units + col]
        }
    }
}

fn shape_err(what: &'static str, want: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        op: what,
        left: want.to_vec(),
        right: got.to_vec(),
    }
}

/// Queue of the `q` most recent predictions, newest first.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    queue: VecDeque<Tensor>,
}

impl CellState {
    /// `q` zero predictions of the given shape.
    pub fn zeros(q: usize, shape: &[usize]) -> Self {
        CellState {
            queue: (0..q).map(|_| Tensor::zeros(shape)).collect(),
        }
    }

    /// State from explicit history, `history[0]` being `x̂_{t−1}`.
    pub fn from_history(history: Vec<Tensor>) -> Self {
        CellState {
            queue: history.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// `x̂_{t−j−1}`.
    pub fn get(&self, j: usize) -> &Tensor {
        &self.queue[j]
    }

    /// Pushes a new prediction and drops the oldest, keeping the length fixed.
    pub fn pushed(&self, prediction: Tensor) -> CellState {
        let mut queue = self.queue.clone();
        if !queue.is_empty() {
            queue.pop_back();
            queue.push_front(prediction);
        }
        CellState { queue }
    }
}

/// One step of the cell. Row `i` of `lag_window` holds `x_{t−i−1}`.
pub fn arma_step(
    params: &ArmaLayerParams,
    lag_window: &Tensor,
    state: &CellState,
) -> Result<(Tensor, CellState)> {
    let (m, k, u) = (params.lags(), params.in_dim, params.units);
    if lag_window.shape() != [m, k] {
        return Err(shape_err(
            "arma_step lag window",
            &[m, k],
            lag_window.shape(),
        ));
    }
    if state.len() != params.q {
        return Err(Error::invalid(format!(
            "state holds {} predictions, cell has q = {}",
            state.len(),
            params.q
        )));
    }
    let x = lag_window.data();
    let mut pre = params.bias.data().to_vec();
    for (i, w) in params.lag_weights.iter().enumerate() {
        let row = &x[i * k..(i + 1) * k];
        for (o, acc) in pre.iter_mut().enumerate() {
            *acc += w.data()[o * k..(o + 1) * k]
                .iter()
                .zip(row)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
    }
    for j in 0..params.q {
        let prev = state.get(j);
        if prev.shape() != [u] {
            return Err(shape_err("arma_step state", &[u], prev.shape()));
        }
        for (o, acc) in pre.iter_mut().enumerate() {
            for (c, &h) in prev.data().iter().enumerate() {
                *acc -= params.feedback(j, o, c) * h;
            }
        }
    }
    let out: Vec<f64> = pre
        .iter()
        .zip(&params.activations)
        .map(|(&v, act)| act.eval(v))
        .collect();
    let out = Tensor::vector(&out);
    let next = state.pushed(out.clone());
    Ok((out, next))
}

/// Runs the cell over `series` (`[T × in_dim]`) with observed lags and a
/// zero-initialised feedback queue. Returns `[(T − max(p,q)) × units]`;
/// row `r` is the prediction of `series[r + max(p,q)]`.
pub fn arma_layer_forward(params: &ArmaLayerParams, series: &Tensor) -> Result<Tensor> {
    run_layer(params, series, false)
}

/// Like [`arma_layer_forward`] but also emits the prediction one step past
/// the end of `series`.
pub fn arma_layer_forecast(params: &ArmaLayerParams, series: &Tensor) -> Result<Tensor> {
    run_layer(params, series, true)
}

fn run_layer(params: &ArmaLayerParams, series: &Tensor, one_past: bool) -> Result<Tensor> {
    params.validate()?;
    let m = params.lags();
    let k = params.in_dim;
    let t_len = check_series(series, m, k)?;
    let end = if one_past { t_len + 1 } else { t_len };
    let mut state = CellState::zeros(params.q, &[params.units]);
    let mut out = Vec::with_capacity((end - m) * params.units);
    let mut window = vec![0.0; m * k];
    for t in m..end {
        for i in 0..m {
            let src = t - i - 1;
            window[i * k..(i + 1) * k].copy_from_slice(&series.data()[src * k..(src + 1) * k]);
        }
        let lag = Tensor::from_parts(vec![m, k], window.clone());
        let (pred, next) = arma_step(params, &lag, &state)?;
        out.extend_from_slice(pred.data());
        state = next;
    }
    Ok(Tensor::from_parts(vec![end - m, params.units], out))
}

pub(crate) fn check_series(series: &Tensor, lags: usize, k: usize) -> Result<usize> {
    let &[t_len, width] = series.shape() else {
        return Err(Error::invalid(format!(
            "series must be [T × k], got {:?}",
            series.shape()
        )));
    };
    if width != k {
        return Err(shape_err("series width", &[t_len, k], series.shape()));
    }
    if t_len <= lags {
        return Err(Error::SeriesTooShort {
            required: lags + 1,
            got: t_len,
        });
    }
    Ok(t_len)
}
