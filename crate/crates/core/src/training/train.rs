use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{LossKind, Monitor, TrainConfig};
use super::metrics::{metric, MetricKind};
use super::optim::{adam_step, AdamState};
use super::windows::{batch_rows, make_windows, Window};
use crate::autodiff::{Graph, NodeId};
use crate::cells::network::{
    init_params, predict_next_frames, stack_forward, NetworkParams, NetworkSpec,
};
use crate::cells::unroll::{build_frames, build_series};
use crate::datagen::{stream_rng, SplitSizes};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stream of the run seed reserved for batch shuffling.
const SHUFFLE_STREAM: u64 = 1 << 40;

/// One series with contiguous train, validation and test segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSplits {
    /// `[T × k]`.
    pub series: Tensor,
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl SeriesSplits {
    pub fn new(series: Tensor, sizes: SplitSizes) -> Result<Self> {
        if series.rank() != 2 || series.shape()[0] != sizes.train + sizes.val + sizes.test {
            return Err(Error::invalid(format!(
                "split sizes {sizes:?} do not cover a series of shape {:?}",
                series.shape()
            )));
        }
        Ok(SeriesSplits {
            series,
            train_end: sizes.train,
            val_end: sizes.train + sizes.val,
        })
    }

    pub fn dim(&self) -> usize {
        self.series.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.series.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, seg: Segment) -> (usize, usize) {
        match seg {
            Segment::Train => (0, self.train_end),
            Segment::Val => (self.train_end, self.val_end),
            Segment::Test => (self.val_end, self.len()),
        }
    }

    pub fn segment(&self, seg: Segment) -> Tensor {
        let (a, b) = self.range(seg);
        self.series.slice_axis0(a, b)
    }
}

/// Input clips `[N×T×H×W×n]` with their next frames `[N×H×W×n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub enum TrainData<'a> {
    Series(&'a SeriesSplits),
    Frames {
        train: &'a FrameSet,
        val: &'a FrameSet,
    },
}

/// One-step predictions and targets for the rows of `seg`. The network runs
/// over everything before the segment too, so every row has its lags; rows
/// before the first full lag window are skipped.
pub fn series_predictions(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &SeriesSplits,
    seg: Segment,
) -> Result<(Tensor, Tensor)> {
    let (start, end) = data.range(seg);
    let m = spec.total_lags();
    let first = start.max(m);
    if first >= end {
        return Err(Error::SeriesTooShort {
            required: m + 1,
            got: end,
        });
    }
    let preds = stack_forward(spec, params, &data.series.slice_axis0(0, end))?;
    Ok((preds.slice_axis0(first - m, end - m), data.series.slice_axis0(first, end)))
}

fn loss_value(kind: LossKind, pred: &Tensor, target: &Tensor) -> Result<f64> {
    match kind {
        LossKind::Mse => Ok(metric(MetricKind::Rmse, pred, target)?.powi(2)),
        LossKind::Bce => metric(MetricKind::Bce, pred, target),
    }
}

/// Validation loss over the whole segment, on the direct (non-graph) route.
pub fn evaluate_loss(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &TrainData,
    kind: LossKind,
) -> Result<f64> {
    monitored_loss(spec, params, data, kind, Monitor::Val)
}

fn monitored_loss(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &TrainData,
    kind: LossKind,
    monitor: Monitor,
) -> Result<f64> {
    match data {
        TrainData::Series(s) => {
            let seg = match monitor {
                Monitor::Val => Segment::Val,
                Monitor::Train => Segment::Train,
            };
            let (p, y) = series_predictions(spec, params, s, seg)?;
            loss_value(kind, &p, &y)
        }
        TrainData::Frames { train, val } => {
            let set = match monitor {
                Monitor::Val => val,
                Monitor::Train => train,
            };
            let p = predict_next_frames(spec, params, &set.inputs)?;
            loss_value(kind, &p, &set.targets)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Loss on the monitored segment (validation unless configured otherwise).
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat the initial weights.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Flattened trainable parameters at initialization and after each
    /// epoch, when requested.
    pub trajectory: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub params: NetworkParams,
    pub history: History,
}

/// Unrolled loss graph for one batch size, reused across batches.
struct BatchGraph {
    g: Graph,
    params: Vec<NodeId>,
    inputs: Vec<NodeId>,
    targets: Vec<NodeId>,
    loss: NodeId,
    norm_nodes: Vec<Vec<NodeId>>,
}

/// Sum of the pointwise losses between two same-shaped nodes.
fn loss_sum(
    g: &mut Graph,
    kind: LossKind,
    pred: NodeId,
    target: NodeId,
    ones: Option<NodeId>,
) -> NodeId {
    match kind {
        LossKind::Mse => {
            let d = g.sub(pred, target);
            let sq = g.square(d);
            g.sum(sq)
        }
        LossKind::Bce => {
            let ones = ones.expect("BCE needs a ones node");
            let p = g.clip(
                pred,
                super::metrics::BCE_CLIP,
                1.0 - super::metrics::BCE_CLIP,
            );
            let lp = g.log(p);
            let q = g.sub(ones, p);
            let lq = g.log(q);
            let not_y = g.sub(ones, target);
            let a = g.mul(target, lp);
            let b = g.mul(not_y, lq);
            let s = g.add(a, b);
            let total = g.sum(s);
            g.scale(total, -1.0)
        }
    }
}

fn sum_all(g: &mut Graph, nodes: Vec<NodeId>) -> NodeId {
    let mut it = nodes.into_iter();
    let first = it.next().expect("at least one term");
    it.fold(first, |acc, n| g.add(acc, n))
}

fn series_graph(
    spec: &NetworkSpec,
    init: &[Tensor],
    batch: usize,
    len: usize,
    washout: usize,
    kind: LossKind,
) -> Result<BatchGraph> {
    let mut g = Graph::new();
    let params: Vec<NodeId> = init.iter().map(|t| g.parameter(t.clone())).collect();
    let inputs: Vec<NodeId> = (0..len).map(|_| g.input()).collect();
    let outs = build_series(&mut g, spec, &params, &inputs)?;
    if washout >= outs.len() {
        return Err(Error::invalid(format!(
            "washout {washout} leaves no targets in a window with {} outputs",
            outs.len()
        )));
    }
    let outs = &outs[washout..];
    let k = spec.input_dim;
    let ones = (kind == LossKind::Bce).then(|| g.constant(Tensor::full(&[batch, k], 1.0)));
    let targets: Vec<NodeId> = outs.iter().map(|_| g.input()).collect();
    let terms = outs
        .iter()
        .zip(&targets)
        .map(|(&o, &y)| loss_sum(&mut g, kind, o, y, ones))
        .collect();
    let total = sum_all(&mut g, terms);
    let loss = g.scale(total, 1.0 / (outs.len() * batch * k) as f64);
    Ok(BatchGraph {
        g,
        params,
        inputs,
        targets,
        loss,
        norm_nodes: Vec::new(),
    })
}

fn frame_graph(
    spec: &NetworkSpec,
    init: &[Tensor],
    target_shape: &[usize],
    len: usize,
    kind: LossKind,
) -> Result<BatchGraph> {
    let mut g = Graph::new();
    let params: Vec<NodeId> = init.iter().map(|t| g.parameter(t.clone())).collect();
    let inputs: Vec<NodeId> = (0..len).map(|_| g.input()).collect();
    let fg = build_frames(&mut g, spec, &params, &inputs)?;
    let ones = (kind == LossKind::Bce).then(|| g.constant(Tensor::full(target_shape, 1.0)));
    let target = g.input();
    let total = loss_sum(&mut g, kind, fg.output, target, ones);
    let n: usize = target_shape.iter().product();
    let loss = g.scale(total, 1.0 / n as f64);
    Ok(BatchGraph {
        g,
        params,
        inputs,
        targets: vec![target],
        loss,
        norm_nodes: fg.norm_nodes,
    })
}

/// Training examples in a form the batch loop can index.
enum Examples {
    Windows(Vec<Window>),
    /// Per sequence `[T×H×W×n]` clips and `[H×W×n]` targets.
    Clips(Vec<Tensor>, Vec<Tensor>),
}

impl Examples {
    fn len(&self) -> usize {
        match self {
            Examples::Windows(w) => w.len(),
            Examples::Clips(x, _) => x.len(),
        }
    }

    fn bindings(&self, bg: &BatchGraph, idx: &[usize]) -> Result<Vec<(NodeId, Tensor)>> {
        let mut out = Vec::with_capacity(bg.inputs.len() + bg.targets.len());
        match self {
            Examples::Windows(all) => {
                let ws: Vec<&Window> = idx.iter().map(|&i| &all[i]).collect();
                for (t, &id) in bg.inputs.iter().enumerate() {
                    out.push((id, batch_rows(&ws, t)));
                }
                let first = ws[0].len() - bg.targets.len();
                for (r, &id) in bg.targets.iter().enumerate() {
                    out.push((id, batch_rows(&ws, r + first)));
                }
            }
            Examples::Clips(x, y) => {
                for (t, &id) in bg.inputs.iter().enumerate() {
                    let frames: Vec<Tensor> = idx.iter().map(|&i| x[i].index_axis0(t)).collect();
                    out.push((id, Tensor::stack(&frames)?));
                }
                let ys: Vec<Tensor> = idx.iter().map(|&i| y[i].clone()).collect();
                out.push((bg.targets[0], Tensor::stack(&ys)?));
            }
        }
        Ok(out)
    }

    fn graph(
        &self,
        spec: &NetworkSpec,
        init: &[Tensor],
        batch: usize,
        cfg: &TrainConfig,
    ) -> Result<BatchGraph> {
        let kind = cfg.loss;
        match self {
            Examples::Windows(w) => series_graph(spec, init, batch, w[0].len(), cfg.washout, kind),
            Examples::Clips(x, y) => {
                let mut shape = vec![batch];
                shape.extend_from_slice(y[0].shape());
                frame_graph(spec, init, &shape, x[0].shape()[0], kind)
            }
        }
    }
}

fn examples(spec: &NetworkSpec, data: &TrainData, cfg: &TrainConfig) -> Result<Examples> {
    match data {
        TrainData::Series(s) => {
            if spec.is_conv() {
                return Err(Error::invalid("series data needs an ARMA network"));
            }
            if s.dim() != spec.input_dim {
                return Err(Error::invalid(format!(
                    "series has {} components but the network expects {}",
                    s.dim(),
                    spec.input_dim
                )));
            }
            let train = s.segment(Segment::Train);
            Ok(Examples::Windows(make_windows(
                &train,
                spec.total_lags(),
                cfg.window_len,
            )?))
        }
        TrainData::Frames { train, val } => {
            if !spec.is_conv() {
                return Err(Error::invalid("frame data needs a ConvARMA network"));
            }
            for set in [train, val] {
                let s = set.inputs.shape();
                if s.len() != 5
                    || s[4] != spec.input_dim
                    || set.targets.shape() != [s[0], s[2], s[3], s[4]]
                {
                    return Err(Error::invalid(format!(
                        "frame data {:?} → {:?} does not fit a {}-channel network",
                        s,
                        set.targets.shape(),
                        spec.input_dim
                    )));
                }
                if set.is_empty() {
                    return Err(Error::invalid("empty frame split"));
                }
            }
            let x = (0..train.len())
                .map(|i| train.inputs.index_axis0(i))
                .collect();
            let y = (0..train.len())
                .map(|i| train.targets.index_axis0(i))
                .collect();
            Ok(Examples::Clips(x, y))
        }
    }
}

fn flat(tensors: &[Tensor]) -> Vec<f64> {
    tensors.iter().flat_map(|t| t.data().to_vec()).collect()
}

/// Trains from Glorot initial weights drawn with `cfg.seed`.
pub fn train(spec: &NetworkSpec, data: &TrainData, cfg: &TrainConfig) -> Result<Trained> {
    train_from(spec, init_params(spec, cfg.seed)?, data, cfg)
}

/// Mini-batch Adam with early stopping on the validation loss. The returned
/// weights are those of the best validation epoch.
pub fn train_from(
    spec: &NetworkSpec,
    init: NetworkParams,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    spec.validate()?;
    let ex = examples(spec, data, cfg)?;
    let mut net = init;
    let mut weights = net.trainable();
    let mut state = AdamState::new(&weights);
    let mut adam = cfg.adam();
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..ex.len()).collect();
    let mut graphs: HashMap<usize, BatchGraph> = HashMap::new();

    let initial_val_loss = monitored_loss(spec, &net, data, cfg.loss, cfg.monitor)?;
    if !initial_val_loss.is_finite() {
        return Err(Error::NonFinite("validation loss at initialization".into()));
    }
    let mut history = History {
        initial_val_loss,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_val_loss,
        stopped_early: false,
        trajectory: Vec::new(),
    };
    if cfg.record_trajectory {
        history.trajectory.push(flat(&weights));
    }
    let mut best = net.clone();
    let (mut wait, mut plateau_wait) = (0, 0);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |e: Error| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}"));
            let bg = match graphs.entry(idx.len()) {
                std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert(ex.graph(spec, &weights, idx.len(), cfg)?)
                }
            };
            for (&id, w) in bg.params.iter().zip(&weights) {
                bg.g.set_parameter(id, w.clone());
            }
            let bindings = ex.bindings(bg, idx)?;
            bg.g.forward(&bindings)?;
            let loss = bg.g.value(bg.loss).expect("evaluated").item();
            if !loss.is_finite() {
                return Err(fail(Error::NonFinite(format!("loss {loss}"))));
            }
            loss_sum += loss * idx.len() as f64;
            let grads = bg.g.backward(bg.loss)?.into_tensors();
            adam_step(&mut weights, &grads, &mut state, &adam).map_err(fail)?;
            for (n, nodes) in bg.norm_nodes.iter().enumerate() {
                // running statistics follow the batch statistics averaged over steps
                let stats: Vec<&(Tensor, Tensor)> = nodes
                    .iter()
                    .filter_map(|&id| bg.g.batch_stats(id))
                    .collect();
                let avg = |pick: fn(&(Tensor, Tensor)) -> &Tensor| {
                    let mut acc = pick(stats[0]).clone();
                    for s in &stats[1..] {
                        for (a, v) in acc.data_mut().iter_mut().zip(pick(s).data()) {
                            *a += v;
                        }
                    }
                    acc.scale(1.0 / stats.len() as f64)
                };
                let (mean, var) = (avg(|s| &s.0), avg(|s| &s.1));
                net.norms[n].update_running(&mean, &var);
            }
        }
        net = net.with_trainable(spec, weights.clone())?;
        let val_loss = monitored_loss(spec, &net, data, cfg.loss, cfg.monitor)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / ex.len() as f64,
            val_loss,
            lr: adam.lr,
        });
        if cfg.record_trajectory {
            history.trajectory.push(flat(&weights));
        }
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = net.clone();
            wait = 0;
            plateau_wait = 0;
        } else {
            wait += 1;
            plateau_wait += 1;
            if let Some(p) = &cfg.plateau {
                if plateau_wait >= p.patience {
                    adam.lr *= p.factor;
                    plateau_wait = 0;
                }
            }
            if wait >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(Trained {
        params: best,
        history,
    })
}
