use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{
    apply_per_unit, broadcast_kind, conv2d_same, conv2d_same_input_grad, conv2d_same_kernel_grad,
    ew, matmul, Activation, Broadcast, Conv2dDims, EwOp, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Parameter,
    MatMul,
    Conv2dSame,
    Add,
    Sub,
    Mul,
    /// One activation for the whole tensor, or one per trailing-axis entry.
    Activate(Vec<Activation>),
    Sum,
    Mean,
    Square,
    Log,
    Clip {
        lo: f64,
        hi: f64,
    },
    Scale(f64),
    Transpose,
    Reshape(Vec<usize>),
    /// Training-mode batch normalization over every axis but the last.
    BatchNorm {
        eps: f64,
    },
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Input => "input",
            Op::Parameter => "parameter",
            Op::MatMul => "matmul",
            Op::Conv2dSame => "conv2d_same",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Activate(_) => "activate",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Square => "square",
            Op::Log => "log",
            Op::Clip { .. } => "clip",
            Op::Scale(_) => "scale",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::BatchNorm { .. } => "batch_norm",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    parents: Vec<NodeId>,
    value: Option<Tensor>,
    adjoint: Option<Tensor>,
    /// Inputs that keep their value across forward passes (constants, parameters).
    fixed: bool,
    /// Batch mean and variance recorded by `BatchNorm`.
    stats: Option<(Tensor, Tensor)>,
}

/// Define-then-run computation graph. Nodes are appended in topological
/// order, so a node's parents always carry smaller ids.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    evaluated: bool,
}

/// Parameter gradients in registration order.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| *n == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(NodeId, Tensor)> {
        self.entries.iter()
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn parameters(&self) -> &[NodeId] {
        &self.params
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Option<Tensor>, fixed: bool) -> NodeId {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            parents,
            value,
            adjoint: None,
            fixed,
            stats: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// An input that must be bound on every `forward` call.
    pub fn input(&mut self) -> NodeId {
        self.push(Op::Input, Vec::new(), None, false)
    }

    /// An input whose value is fixed at construction.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, Vec::new(), Some(value), true)
    }

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Parameter, Vec::new(), Some(value), true);
        self.params.push(id);
        id
    }

    pub fn set_parameter(&mut self, id: NodeId, value: Tensor) {
        assert_eq!(
            self.nodes[id.0].op,
            Op::Parameter,
            "node {} is not a parameter",
            id.0
        );
        self.nodes[id.0].value = Some(value);
        self.evaluated = false;
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, vec![a, b], None, false)
    }

    pub fn conv2d_same(&mut self, input: NodeId, kernel: NodeId) -> NodeId {
        self.push(Op::Conv2dSame, vec![input, kernel], None, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b], None, false)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b], None, false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b], None, false)
    }

    pub fn activate(&mut self, act: Activation, a: NodeId) -> NodeId {
        self.push(Op::Activate(vec![act]), vec![a], None, false)
    }

    pub fn activate_per_unit(&mut self, acts: &[Activation], a: NodeId) -> NodeId {
        self.push(Op::Activate(acts.to_vec()), vec![a], None, false)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a], None, false)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean, vec![a], None, false)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square, vec![a], None, false)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, vec![a], None, false)
    }

    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.push(Op::Clip { lo, hi }, vec![a], None, false)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(c), vec![a], None, false)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose, vec![a], None, false)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(shape.to_vec()), vec![a], None, false)
    }

    pub fn batch_norm(&mut self, x: NodeId, scale: NodeId, shift: NodeId, eps: f64) -> NodeId {
        self.push(Op::BatchNorm { eps }, vec![x, scale, shift], None, false)
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].value.as_ref()
    }

    /// Adjoint after `backward`; nodes the loss does not reach get zeros.
    pub fn adjoint(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        match (&node.adjoint, &node.value) {
            (Some(a), _) => Some(a.clone()),
            (None, Some(v)) => Some(Tensor::zeros(v.shape())),
            (None, None) => None,
        }
    }

    /// Batch mean and variance seen by a `BatchNorm` node on the last forward pass.
    pub fn batch_stats(&self, id: NodeId) -> Option<&(Tensor, Tensor)> {
        self.nodes[id.0].stats.as_ref()
    }

    /// Evaluates every node in order and returns the value of the last one.
    pub fn forward(&mut self, bindings: &[(NodeId, Tensor)]) -> Result<&Tensor> {
        let bound: HashMap<usize, &Tensor> = bindings.iter().map(|(id, t)| (id.0, t)).collect();
        for i in 0..self.nodes.len() {
            self.nodes[i].adjoint = None;
            if self.nodes[i].op == Op::Input && !self.nodes[i].fixed {
                let t = bound.get(&i).ok_or(Error::UnboundInput(i))?;
                self.nodes[i].value = Some((*t).clone());
                continue;
            }
            if self.nodes[i].fixed {
                continue;
            }
            let (value, stats) = self.eval_node(i).map_err(|e| Error::Node {
                node: i,
                op: self.nodes[i].op.to_string(),
                message: e.to_string(),
            })?;
            self.nodes[i].value = Some(value);
            self.nodes[i].stats = stats;
        }
        self.evaluated = true;
        self.nodes
            .last()
            .and_then(|n| n.value.as_ref())
            .ok_or_else(|| Error::invalid("empty graph"))
    }

    fn parent_value(&self, i: usize, k: usize) -> &Tensor {
        let p = self.nodes[i].parents[k].0;
        self.nodes[p]
            .value
            .as_ref()
            .expect("parents are evaluated before children")
    }

    fn eval_node(&self, i: usize) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        let node = &self.nodes[i];
        let a = || self.parent_value(i, 0);
        let b = || self.parent_value(i, 1);
        let out = match &node.op {
            Op::Input | Op::Parameter => unreachable!("leaves are not evaluated"),
            Op::MatMul => matmul(a(), b())?,
            Op::Conv2dSame => conv2d_same(a(), b())?,
            Op::Add => ew(EwOp::Add, a(), b())?,
            Op::Sub => ew(EwOp::Sub, a(), b())?,
            Op::Mul => ew(EwOp::Mul, a(), b())?,
            Op::Activate(acts) => apply_per_unit(acts, a())?,
            Op::Sum => Tensor::scalar(a().sum()),
            Op::Mean => Tensor::scalar(a().mean()),
            Op::Square => a().map(|v| v * v),
            Op::Log => a().map(f64::ln),
            Op::Clip { lo, hi } => a().map(|v| v.clamp(*lo, *hi)),
            Op::Scale(c) => a().scale(*c),
            Op::Transpose => a().transpose()?,
            Op::Reshape(shape) => a().reshape(shape)?,
            Op::BatchNorm { eps } => {
                let (y, mean, var) = batch_norm_train(a(), b(), self.parent_value(i, 2), *eps)?;
                return Ok((y, Some((mean, var))));
            }
        };
        Ok((out, None))
    }

    /// Reverse sweep from `loss`. Contributions from repeated uses of a node
    /// accumulate by summation.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let loss_value = self.nodes[loss.0]
            .value
            .as_ref()
            .ok_or(Error::BackwardBeforeForward)?;
        let shape = loss_value.shape().to_vec();
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                node: loss.0,
                shape,
            });
        }
        for n in &mut self.nodes {
            n.adjoint = None;
        }
        self.nodes[loss.0].adjoint = Some(Tensor::full(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            if self.nodes[i].parents.is_empty() {
                continue;
            }
            let Some(upstream) = self.nodes[i].adjoint.take() else {
                continue;
            };
            let contributions = self.vjp(i, &upstream);
            self.nodes[i].adjoint = Some(upstream);
            for (k, grad) in contributions.into_iter().enumerate() {
                let Some(grad) = grad else { continue };
                let p = self.nodes[i].parents[k].0;
                match &mut self.nodes[p].adjoint {
                    Some(acc) => {
                        for (x, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *x += g;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let entries = self
            .params
            .iter()
            .map(|&id| {
                let node = &self.nodes[id.0];
                let g = node.adjoint.clone().unwrap_or_else(|| {
                    Tensor::zeros(
                        node.value
                            .as_ref()
                            .expect("parameters carry values")
                            .shape(),
                    )
                });
                (id, g)
            })
            .collect();
        Ok(Gradients { entries })
    }

    /// Vector-Jacobian products of node `i` for each parent (None = no flow).
    fn vjp(&self, i: usize, up: &Tensor) -> Vec<Option<Tensor>> {
        let node = &self.nodes[i];
        let y = node.value.as_ref().expect("evaluated");
        let a = self.parent_value(i, 0);
        let ud = up.data();
        let like = |t: &Tensor, data: Vec<f64>| Tensor::from_parts(t.shape().to_vec(), data);
        match &node.op {
            Op::Input | Op::Parameter => Vec::new(),
            Op::MatMul => {
                let b = self.parent_value(i, 1);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![0.0; m * k];
                for r in 0..m {
                    let urow = &ud[r * n..(r + 1) * n];
                    for p in 0..k {
                        ga[r * k + p] = urow
                            .iter()
                            .zip(&bd[p * n..(p + 1) * n])
                            .map(|(u, b)| u * b)
                            .sum();
                    }
                }
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let urow = &ud[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = ad[r * k + p];
                        for (g, u) in gb[p * n..(p + 1) * n].iter_mut().zip(urow) {
                            *g += av * u;
                        }
                    }
                }
                vec![Some(like(a, ga)), Some(like(b, gb))]
            }
            Op::Conv2dSame => {
                let kernel = self.parent_value(i, 1);
                let d = Conv2dDims::infer(a.shape(), kernel.shape()).expect("validated in forward");
                let gx = conv2d_same_input_grad(&d, kernel.data(), ud);
                let gk = conv2d_same_kernel_grad(&d, a.data(), ud);
                vec![Some(like(a, gx)), Some(like(kernel, gk))]
            }
            Op::Add | Op::Sub | Op::Mul => {
                let b = self.parent_value(i, 1);
                let kind =
                    broadcast_kind("vjp", a.shape(), b.shape()).expect("validated in forward");
                let c = b.len();
                let bd = b.data();
                let b_at = |j: usize| match kind {
                    Broadcast::Same => bd[j],
                    Broadcast::Trailing => bd[j % c],
                };
                let (ga, gb_full): (Vec<f64>, Vec<f64>) = match node.op {
                    Op::Add => (ud.to_vec(), ud.to_vec()),
                    Op::Sub => (ud.to_vec(), ud.iter().map(|u| -u).collect()),
                    _ => (
                        ud.iter().enumerate().map(|(j, u)| u * b_at(j)).collect(),
                        ud.iter().zip(a.data()).map(|(u, x)| u * x).collect(),
                    ),
                };
                let gb = match kind {
                    Broadcast::Same => gb_full,
                    Broadcast::Trailing => {
                        let mut acc = vec![0.0; c];
                        for row in gb_full.chunks_exact(c) {
                            for (s, v) in acc.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc
                    }
                };
                vec![Some(like(a, ga)), Some(like(b, gb))]
            }
            Op::Activate(acts) => {
                let n = acts.len();
                let g = ud
                    .iter()
                    .zip(a.data())
                    .zip(y.data())
                    .enumerate()
                    .map(|(j, ((u, &x), &yv))| u * acts[j % n].derivative(x, yv))
                    .collect();
                vec![Some(like(a, g))]
            }
            Op::Sum => vec![Some(Tensor::full(a.shape(), ud[0]))],
            Op::Mean => vec![Some(Tensor::full(a.shape(), ud[0] / a.len() as f64))],
            Op::Square => vec![Some(like(
                a,
                ud.iter().zip(a.data()).map(|(u, x)| 2.0 * x * u).collect(),
            ))],
            Op::Log => vec![Some(like(
                a,
                ud.iter().zip(a.data()).map(|(u, x)| u / x).collect(),
            ))],
            Op::Clip { lo, hi } => {
                let g = ud
                    .iter()
                    .zip(a.data())
                    .map(|(u, x)| if (*lo..=*hi).contains(x) { *u } else { 0.0 })
                    .collect();
                vec![Some(like(a, g))]
            }
            Op::Scale(c) => vec![Some(like(a, ud.iter().map(|u| u * c).collect()))],
            Op::Transpose => vec![Some(up.transpose().expect("rank 2"))],
            Op::Reshape(_) => vec![Some(like(a, ud.to_vec()))],
            Op::BatchNorm { eps } => {
                let scale = self.parent_value(i, 1);
                let (mean, var) = node.stats.as_ref().expect("stats recorded in forward");
                let (gx, gs, gb) = batch_norm_vjp(a, scale, mean, var, *eps, ud);
                vec![
                    Some(like(a, gx)),
                    Some(like(scale, gs)),
                    Some(like(scale, gb)),
                ]
            }
        }
    }
}

/// Per-channel normalization over all leading axes. Returns `(y, mean, var)`
/// with the biased batch variance.
pub(crate) fn batch_norm_train(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("batch_norm on a scalar"))?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batch_norm",
            left: x.shape().to_vec(),
            right: scale.shape().to_vec(),
        });
    }
    let rows = x.len() / c;
    let mut mean = vec![0.0; c];
    for row in x.data().chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; c];
    for row in x.data().chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut y = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(c) {
        for ch in 0..c {
            y.push((row[ch] - mean[ch]) * inv[ch] * scale.data()[ch] + shift.data()[ch]);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        Tensor::vector(&mean),
        Tensor::vector(&var),
    ))
}

fn batch_norm_vjp(
    x: &Tensor,
    scale: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
    up: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = scale.len();
    let rows = (x.len() / c) as f64;
    let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let m = mean.data();
    let mut g_shift = vec![0.0; c];
    let mut g_scale = vec![0.0; c];
    for (row, urow) in x.data().chunks_exact(c).zip(up.chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (row[ch] - m[ch]) * inv[ch];
            g_shift[ch] += urow[ch];
            g_scale[ch] += urow[ch] * xhat;
        }
    }
    let mut gx = Vec::with_capacity(x.len());
    for (row, urow) in x.data().chunks_exact(c).zip(up.chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (row[ch] - m[ch]) * inv[ch];
            gx.push(
                scale.data()[ch]
                    * inv[ch]
                    * (urow[ch] - g_shift[ch] / rows - xhat * g_scale[ch] / rows),
            );
        }
    }
    (gx, g_scale, g_shift)
}
