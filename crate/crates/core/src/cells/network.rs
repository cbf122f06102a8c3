//! Stacked networks of ARMA or ConvARMA layers with a readout head.
//!
//! Each layer consumes the full prediction sequence of the layer below as its
//! own input series and draws its lag window from it, so a stack of layers
//! with lags `m_1, m_2, ..` maps `T` steps to `T − Σ m_l` predictions.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arma::{arma_layer_forward, ArmaLayerParams, ArmaLayerSpec};
use super::batchnorm::BatchNormParams;
use super::conv::{conv_arma_layer_forward, ConvArmaParams, ConvArmaSpec};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{apply, conv2d_same, ew, matmul, Activation, EwOp, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Arma(ArmaLayerSpec),
    Conv(ConvArmaSpec),
}

impl LayerSpec {
    pub fn lags(&self) -> usize {
        match self {
            LayerSpec::Arma(s) => s.lags(),
            LayerSpec::Conv(s) => s.lags(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            LayerSpec::Arma(s) => s.units,
            LayerSpec::Conv(s) => s.filters,
        }
    }
}

/// Readout applied per time step. Dense and 1×1-conv heads map back to the
/// input dimension so the network predicts the next observation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadSpec {
    Identity,
    Dense { activation: Activation },
    Conv1x1 { activation: Activation },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Series dimension `k`, or channel count for frames.
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
    /// Normalize between convolutional layers.
    #[serde(default)]
    pub batch_norm: bool,
}

impl NetworkSpec {
    /// A single linear ARMA(p, q) layer read out directly.
    pub fn linear_cell(input_dim: usize, p: usize, q: usize) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![LayerSpec::Arma(ArmaLayerSpec::linear(p, q, input_dim))],
            head: HeadSpec::Identity,
            batch_norm: false,
        }
    }

    /// One hybrid layer (one linear unit, the rest ReLU) with a linear dense head.
    pub fn shallow(input_dim: usize, p: usize, q: usize, units: usize) -> Self {
        NetworkSpec {
            input_dim,
            layers: vec![LayerSpec::Arma(ArmaLayerSpec::hybrid(p, q, units))],
            head: HeadSpec::Dense {
                activation: Activation::Linear,
            },
            batch_norm: false,
        }
    }

    /// Two stacked ReLU layers sharing `(p, q, units)`, linear dense head.
    pub fn deep(input_dim: usize, p: usize, q: usize, units: usize) -> Self {
        let layer = ArmaLayerSpec {
            activations: vec![Activation::Relu],
            ..ArmaLayerSpec::linear(p, q, units)
        };
        NetworkSpec {
            input_dim,
            layers: vec![LayerSpec::Arma(layer.clone()), LayerSpec::Arma(layer)],
            head: HeadSpec::Dense {
                activation: Activation::Linear,
            },
            batch_norm: false,
        }
    }

    /// ConvARMA layers with a sigmoid 1×1 readout, for binary frames.
    pub fn conv(input_channels: usize, layers: Vec<ConvArmaSpec>, batch_norm: bool) -> Self {
        NetworkSpec {
            input_dim: input_channels,
            layers: layers.into_iter().map(LayerSpec::Conv).collect(),
            head: HeadSpec::Conv1x1 {
                activation: Activation::Sigmoid,
            },
            batch_norm,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.layers.first(), Some(LayerSpec::Conv(_)))
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim
    }

    /// Leading steps consumed as lags across the whole stack.
    pub fn total_lags(&self) -> usize {
        self.layers.iter().map(LayerSpec::lags).sum()
    }

    fn norm_count(&self) -> usize {
        if self.batch_norm {
            self.layers.len() - 1
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::invalid("network needs at least one layer"))?;
        let conv = matches!(first, LayerSpec::Conv(_));
        for layer in &self.layers {
            match layer {
                LayerSpec::Arma(s) if !conv => s.validate()?,
                LayerSpec::Conv(s) if conv => s.validate()?,
                _ => return Err(Error::invalid("cannot mix ARMA and ConvARMA layers")),
            }
        }
        let last = self.layers.last().expect("non-empty").width();
        match (&self.head, conv) {
            (HeadSpec::Identity, _) if last != self.input_dim => Err(Error::invalid(format!(
                "identity head needs the last layer width {last} to equal input_dim {}",
                self.input_dim
            ))),
            (HeadSpec::Dense { .. }, true) => {
                Err(Error::invalid("dense head on a ConvARMA network"))
            }
            (HeadSpec::Conv1x1 { .. }, false) => {
                Err(Error::invalid("1x1 conv head on an ARMA network"))
            }
            _ if self.batch_norm && !conv => Err(Error::invalid(
                "batch_norm applies to ConvARMA networks only",
            )),
            _ => Ok(()),
        }
    }
}

/// Initial value rule for one named tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Glorot {
        fan_in: usize,
        fan_out: usize,
        diagonal: bool,
        /// Upper limit on the uniform bound.
        cap: f64,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
    trainable: bool,
}

impl Slot {
    fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        Slot {
            name,
            shape,
            init,
            trainable: true,
        }
    }
}

/// Every tensor of a network in canonical order: per layer the lag weights,
/// feedback weights and bias, then normalization tensors, then the head.
fn layout(spec: &NetworkSpec) -> Result<Vec<Slot>> {
    spec.validate()?;
    let mut slots = Vec::new();
    let mut in_dim = spec.input_dim;
    for (l, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Arma(s) => {
                let u = s.units;
                for i in 0..s.lags() {
                    let init = Init::Glorot {
                        fan_in: in_dim,
                        fan_out: u,
                        diagonal: false,
                        cap: f64::INFINITY,
                    };
                    slots.push(Slot::new(
                        format!("layer{l}.beta{}", i + 1),
                        vec![u, in_dim],
                        init,
                    ));
                }
                for j in 0..s.q {
                    // keeps Σ_j ‖Γ_j‖_∞ below 1/2, so the feedback recursion is
                    // stable at initialization even for linear units
                    let init = Init::Glorot {
                        fan_in: u,
                        fan_out: u,
                        diagonal: s.diagonal_feedback,
                        cap: 0.5 / (u * s.q) as f64,
                    };
                    slots.push(Slot::new(
                        format!("layer{l}.gamma{}", j + 1),
                        vec![u, u],
                        init,
                    ));
                }
                slots.push(Slot::new(format!("layer{l}.alpha"), vec![u], Init::Zeros));
            }
            LayerSpec::Conv(s) => {
                let [k1, k2] = s.kernel;
                let c = s.filters;
                for i in 0..s.p {
                    let init = Init::Glorot {
                        fan_in: k1 * k2 * in_dim,
                        fan_out: k1 * k2 * c,
                        diagonal: false,
                        cap: f64::INFINITY,
                    };
                    slots.push(Slot::new(
                        format!("layer{l}.beta{}", i + 1),
                        vec![k1, k2, in_dim, c],
                        init,
                    ));
                }
                for j in 0..s.q {
                    let init = Init::Glorot {
                        fan_in: k1 * k2 * c,
                        fan_out: k1 * k2 * c,
                        diagonal: false,
                        cap: f64::INFINITY,
                    };
                    slots.push(Slot::new(
                        format!("layer{l}.gamma{}", j + 1),
                        vec![k1, k2, c, c],
                        init,
                    ));
                }
                slots.push(Slot::new(format!("layer{l}.alpha"), vec![c], Init::Zeros));
            }
        }
        in_dim = layer.width();
    }
    for n in 0..spec.norm_count() {
        let c = spec.layers[n].width();
        slots.push(Slot::new(format!("norm{n}.scale"), vec![c], Init::Ones));
        slots.push(Slot::new(format!("norm{n}.shift"), vec![c], Init::Zeros));
    }
    for n in 0..spec.norm_count() {
        let c = spec.layers[n].width();
        let mut mean = Slot::new(format!("norm{n}.mean"), vec![c], Init::Zeros);
        let mut var = Slot::new(format!("norm{n}.var"), vec![c], Init::Ones);
        mean.trainable = false;
        var.trainable = false;
        slots.push(mean);
        slots.push(var);
    }
    let out = spec.output_dim();
    match spec.head {
        HeadSpec::Identity => {}
        HeadSpec::Dense { .. } => {
            let init = Init::Glorot {
                fan_in: in_dim,
                fan_out: out,
                diagonal: false,
                cap: f64::INFINITY,
            };
            slots.push(Slot::new("head.weight".into(), vec![out, in_dim], init));
            slots.push(Slot::new("head.bias".into(), vec![out], Init::Zeros));
        }
        HeadSpec::Conv1x1 { .. } => {
            let init = Init::Glorot {
                fan_in: in_dim,
                fan_out: out,
                diagonal: false,
                cap: f64::INFINITY,
            };
            slots.push(Slot::new(
                "head.weight".into(),
                vec![1, 1, in_dim, out],
                init,
            ));
            slots.push(Slot::new("head.bias".into(), vec![out], Init::Zeros));
        }
    }
    Ok(slots)
}

/// Shapes of the trainable tensors in canonical order.
pub fn trainable_shapes(spec: &NetworkSpec) -> Result<Vec<Vec<usize>>> {
    Ok(layout(spec)?
        .into_iter()
        .filter(|s| s.trainable)
        .map(|s| s.shape)
        .collect())
}

/// Free scalar parameters. Masked off-diagonal feedback entries do not count.
pub fn parameter_count(spec: &NetworkSpec) -> Result<usize> {
    Ok(layout(spec)?
        .iter()
        .filter(|s| s.trainable)
        .map(|s| match s.init {
            Init::Glorot { diagonal: true, .. } => s.shape[0],
            _ => s.shape.iter().product(),
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    Arma(ArmaLayerParams),
    Conv(ConvArmaParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub head: Option<HeadParams>,
    pub norms: Vec<BatchNormParams>,
}

impl NetworkParams {
    /// Builds from tensors listed in canonical order (all of them, buffers included).
    fn from_slots(spec: &NetworkSpec, slots: &[Slot], tensors: Vec<Tensor>) -> Result<Self> {
        for (slot, t) in slots.iter().zip(&tensors) {
            if t.shape() != slot.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "network tensor",
                    left: slot.shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        if slots.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "network needs {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut take = |n: usize| -> Vec<Tensor> { it.by_ref().take(n).collect() };
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_dim = spec.input_dim;
        for layer in &spec.layers {
            match layer {
                LayerSpec::Arma(s) => {
                    let lag_weights = take(s.lags());
                    let feedback_weights = take(s.q);
                    let bias = take(1).pop().expect("bias slot");
                    layers.push(LayerParams::Arma(ArmaLayerParams {
                        p: s.p,
                        q: s.q,
                        in_dim,
                        units: s.units,
                        lag_weights,
                        feedback_weights,
                        bias,
                        activations: s.unit_activations(),
                        diagonal_feedback: s.diagonal_feedback,
                    }));
                }
                LayerSpec::Conv(s) => {
                    let input_kernels = take(s.p);
                    let feedback_kernels = take(s.q);
                    let bias = take(1).pop().expect("bias slot");
                    layers.push(LayerParams::Conv(ConvArmaParams {
                        p: s.p,
                        q: s.q,
                        in_channels: in_dim,
                        filters: s.filters,
                        input_kernels,
                        feedback_kernels,
                        bias,
                        activation: s.activation,
                    }));
                }
            }
            in_dim = layer.width();
        }
        let k = spec.norm_count();
        let affine = take(2 * k);
        let stats = take(2 * k);
        let norms = (0..k)
            .map(|n| BatchNormParams {
                scale: affine[2 * n].clone(),
                shift: affine[2 * n + 1].clone(),
                running_mean: stats[2 * n].clone(),
                running_var: stats[2 * n + 1].clone(),
            })
            .collect();
        let head = match spec.head {
            HeadSpec::Identity => None,
            HeadSpec::Dense { activation } | HeadSpec::Conv1x1 { activation } => {
                let mut wb = take(2);
                let bias = wb.pop().expect("head bias");
                let weight = wb.pop().expect("head weight");
                Some(HeadParams {
                    weight,
                    bias,
                    activation,
                })
            }
        };
        Ok(NetworkParams {
            layers,
            head,
            norms,
        })
    }

    fn all_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerParams::Arma(l) => {
                    out.extend(&l.lag_weights);
                    out.extend(&l.feedback_weights);
                    out.push(&l.bias);
                }
                LayerParams::Conv(l) => {
                    out.extend(&l.input_kernels);
                    out.extend(&l.feedback_kernels);
                    out.push(&l.bias);
                }
            }
        }
        for n in &self.norms {
            out.push(&n.scale);
            out.push(&n.shift);
        }
        for n in &self.norms {
            out.push(&n.running_mean);
            out.push(&n.running_var);
        }
        if let Some(h) = &self.head {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    /// Trainable tensors in canonical order (running statistics excluded).
    pub fn trainable(&self) -> Vec<Tensor> {
        let n_stats = 2 * self.norms.len();
        let all = self.all_tensors();
        let split = all.len() - n_stats - if self.head.is_some() { 2 } else { 0 };
        all[..split]
            .iter()
            .chain(&all[split + n_stats..])
            .map(|t| (*t).clone())
            .collect()
    }

    /// Replaces the trainable tensors, keeping running statistics.
    pub fn with_trainable(&self, spec: &NetworkSpec, trainable: Vec<Tensor>) -> Result<Self> {
        let slots = layout(spec)?;
        let mut fresh = trainable.into_iter();
        let mut old = self.all_tensors().into_iter();
        let mut all = Vec::with_capacity(slots.len());
        for slot in &slots {
            let kept = old
                .next()
                .ok_or_else(|| Error::invalid("parameters do not match spec"))?;
            if slot.trainable {
                all.push(
                    fresh
                        .next()
                        .ok_or_else(|| Error::invalid("too few trainable tensors"))?,
                );
            } else {
                all.push(kept.clone());
            }
        }
        if fresh.next().is_some() {
            return Err(Error::invalid("too many trainable tensors"));
        }
        NetworkParams::from_slots(spec, &slots, all)
    }

    /// Every tensor keyed by its checkpoint name.
    pub fn named_tensors(&self, spec: &NetworkSpec) -> Result<Vec<(String, Tensor)>> {
        let slots = layout(spec)?;
        let all = self.all_tensors();
        if all.len() != slots.len() {
            return Err(Error::invalid("parameters do not match spec"));
        }
        Ok(slots
            .into_iter()
            .zip(all)
            .map(|(s, t)| (s.name, t.clone()))
            .collect())
    }

    /// Inverse of [`NetworkParams::named_tensors`]; every name must be present.
    pub fn from_named(spec: &NetworkSpec, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        let slots = layout(spec)?;
        let mut tensors = Vec::with_capacity(slots.len());
        for slot in &slots {
            tensors.push(
                named
                    .remove(&slot.name)
                    .ok_or_else(|| Error::Format(format!("missing tensor {}", slot.name)))?,
            );
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        NetworkParams::from_slots(spec, &slots, tensors)
    }
}

/// Glorot-uniform weights, zero biases, unit normalization scales.
/// Deterministic in `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    let slots = layout(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = slots
        .iter()
        .map(|slot| {
            let n: usize = slot.shape.iter().product();
            let data = match slot.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot {
                    fan_in,
                    fan_out,
                    diagonal,
                    cap,
                } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt().min(cap);
                    let dist = Uniform::new_inclusive(-bound, bound);
                    let mut data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    if diagonal {
                        let u = slot.shape[0];
                        for (idx, v) in data.iter_mut().enumerate() {
                            if idx / u != idx % u {
                                *v = 0.0;
                            }
                        }
                    }
                    data
                }
            };
            Tensor::from_parts(slot.shape.clone(), data)
        })
        .collect();
    NetworkParams::from_slots(spec, &slots, tensors)
}

fn check_params(spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
    let slots = layout(spec)?;
    let all = params.all_tensors();
    if all.len() != slots.len()
        || slots
            .iter()
            .zip(&all)
            .any(|(s, t)| t.shape() != s.shape.as_slice())
    {
        return Err(Error::invalid("parameters do not match network spec"));
    }
    Ok(())
}

fn dense_head(head: &HeadParams, h: &Tensor) -> Result<Tensor> {
    let wt = head.weight.transpose()?;
    let y = ew(EwOp::Add, &matmul(h, &wt)?, &head.bias)?;
    Ok(apply(head.activation, &y))
}

/// Runs an ARMA network over `series` (`[T×k]`) with teacher-forced lags.
/// Row `r` of the `[(T − Σ m_l) × k]` result predicts `series[r + Σ m_l]`.
pub fn stack_forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    series: &Tensor,
) -> Result<Tensor> {
    check_params(spec, params)?;
    if spec.is_conv() {
        return Err(Error::invalid("stack_forward expects an ARMA network"));
    }
    let mut h = series.clone();
    for layer in &params.layers {
        let LayerParams::Arma(l) = layer else {
            unreachable!("validated")
        };
        h = arma_layer_forward(l, &h)?;
    }
    match &params.head {
        None => Ok(h),
        Some(head) => dense_head(head, &h),
    }
}

/// Predicts the frame after `frames` (`[T×H×W×n]`). Every layer emits its
/// forecast one step past its input, and the next layer lags that sequence;
/// normalization uses running statistics.
pub fn predict_next_frame(
    spec: &NetworkSpec,
    params: &NetworkParams,
    frames: &Tensor,
) -> Result<Tensor> {
    check_params(spec, params)?;
    if !spec.is_conv() {
        return Err(Error::invalid(
            "predict_next_frame expects a ConvARMA network",
        ));
    }
    let mut h = frames.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let LayerParams::Conv(c) = layer else {
            unreachable!("validated")
        };
        h = conv_arma_layer_forward(c, &h, true)?;
        if let Some(norm) = params.norms.get(l) {
            h = norm.eval(&h)?;
        }
    }
    let last = h.index_axis0(h.shape()[0] - 1);
    let head = params.head.as_ref().expect("conv networks carry a head");
    let y = ew(EwOp::Add, &conv2d_same(&last, &head.weight)?, &head.bias)?;
    Ok(apply(head.activation, &y))
}

/// [`predict_next_frame`] over a batch `[N×T×H×W×n]`, parallel across sequences.
pub fn predict_next_frames(
    spec: &NetworkSpec,
    params: &NetworkParams,
    batch: &Tensor,
) -> Result<Tensor> {
    if batch.rank() != 5 {
        return Err(Error::invalid(format!(
            "expected [N×T×H×W×C] sequences, got {:?}",
            batch.shape()
        )));
    }
    let idx: Vec<usize> = (0..batch.shape()[0]).collect();
    let preds = parallel::map(&idx, |&i| {
        predict_next_frame(spec, params, &batch.index_axis0(i))
    });
    Tensor::stack(&preds.into_iter().collect::<Result<Vec<_>>>()?)
}
