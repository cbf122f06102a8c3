//! Unrolled networks as autodiff graphs, for training by backpropagation
//! through time.
//!
//! Data are laid out batch-first per time step: series steps are `[B×k]`
//! nodes and frame steps are `[B×H×W×n]` nodes. Weight nodes are passed in
//! the canonical trainable order of [`super::network::trainable_shapes`].
//! Feedback terms that would read the zero initial state are left out of
//! the graph, which is equivalent to adding zero.

use super::batchnorm::BN_EPS;
use super::network::{HeadSpec, LayerSpec, NetworkSpec};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

struct Cursor<'a> {
    ids: &'a [NodeId],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[NodeId]> {
        let end = self.at + n;
        if end > self.ids.len() {
            return Err(Error::invalid(format!(
                "network needs more than {} parameter nodes",
                self.ids.len()
            )));
        }
        let out = &self.ids[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn one(&mut self) -> Result<NodeId> {
        Ok(self.take(1)?[0])
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.ids.len() {
            return Err(Error::invalid(format!(
                "{} parameter nodes left unused",
                self.ids.len() - self.at
            )));
        }
        Ok(())
    }
}

fn sum_nodes(g: &mut Graph, terms: Vec<NodeId>) -> NodeId {
    let mut it = terms.into_iter();
    let first = it.next().expect("at least one term");
    it.fold(first, |acc, t| g.add(acc, t))
}

/// Unrolls an ARMA network over per-step inputs `x[t]` (`[B×k]`). Returns
/// `len(x) − Σ m_l` output nodes (`[B×k]`); output `r` predicts step
/// `r + Σ m_l`.
pub fn build_series(
    g: &mut Graph,
    spec: &NetworkSpec,
    params: &[NodeId],
    x: &[NodeId],
) -> Result<Vec<NodeId>> {
    spec.validate()?;
    if spec.is_conv() {
        return Err(Error::invalid("build_series expects an ARMA network"));
    }
    let mut cur = Cursor { ids: params, at: 0 };
    let mut seq = x.to_vec();
    for layer in &spec.layers {
        let LayerSpec::Arma(s) = layer else {
            unreachable!("validated")
        };
        let m = s.lags();
        if seq.len() <= m {
            return Err(Error::SeriesTooShort {
                required: m + 1,
                got: seq.len(),
            });
        }
        let lag_t: Vec<NodeId> = cur
            .take(m)?
            .to_vec()
            .into_iter()
            .map(|w| g.transpose(w))
            .collect();
        let mask = s
            .diagonal_feedback
            .then(|| g.constant(Tensor::identity(s.units)));
        let fb_t: Vec<NodeId> = cur
            .take(s.q)?
            .to_vec()
            .into_iter()
            .map(|w| {
                let w = match mask {
                    Some(mk) => g.mul(w, mk),
                    None => w,
                };
                g.transpose(w)
            })
            .collect();
        let bias = cur.one()?;
        let acts = s.unit_activations();
        let mut out: Vec<NodeId> = Vec::with_capacity(seq.len() - m);
        for t in m..seq.len() {
            let mut terms: Vec<NodeId> =
                (0..m).map(|i| g.matmul(seq[t - i - 1], lag_t[i])).collect();
            // bias [u] broadcasts over the batch rows, so it must come after a matmul
            terms.push(bias);
            let mut pre = sum_nodes(g, terms);
            for (j, &gt) in fb_t.iter().enumerate() {
                // out index r holds time m + r
                if t >= m + j + 1 {
                    let prev = out[t - m - j - 1];
                    let fb = g.matmul(prev, gt);
                    pre = g.sub(pre, fb);
                }
            }
            out.push(if acts.iter().all(|&a| a == Activation::Linear) {
                pre
            } else {
                g.activate_per_unit(&acts, pre)
            });
        }
        seq = out;
    }
    let out = match spec.head {
        HeadSpec::Identity => seq,
        HeadSpec::Dense { activation } => {
            let w = cur.one()?;
            let b = cur.one()?;
            let wt = g.transpose(w);
            seq.into_iter()
                .map(|h| {
                    let y = g.matmul(h, wt);
                    let y = g.add(y, b);
                    if activation == Activation::Linear {
                        y
                    } else {
                        g.activate(activation, y)
                    }
                })
                .collect()
        }
        HeadSpec::Conv1x1 { .. } => unreachable!("validated"),
    };
    cur.finish()?;
    Ok(out)
}

/// Frame network output plus the normalization nodes whose batch statistics
/// feed the running averages, grouped by normalization layer.
pub struct FrameGraph {
    pub output: NodeId,
    pub norm_nodes: Vec<Vec<NodeId>>,
}

/// Unrolls a ConvARMA network over per-step frames `x[t]` (`[B×H×W×n]`) and
/// returns the prediction of the frame after the last one (`[B×H×W×n]`).
/// Normalization between layers uses batch statistics.
pub fn build_frames(
    g: &mut Graph,
    spec: &NetworkSpec,
    params: &[NodeId],
    x: &[NodeId],
) -> Result<FrameGraph> {
    spec.validate()?;
    if !spec.is_conv() {
        return Err(Error::invalid("build_frames expects a ConvARMA network"));
    }
    let mut cur = Cursor { ids: params, at: 0 };
    let mut layer_ids = Vec::new();
    for layer in &spec.layers {
        let LayerSpec::Conv(s) = layer else {
            unreachable!("validated")
        };
        let w = cur.take(s.p)?.to_vec();
        let u = cur.take(s.q)?.to_vec();
        let b = cur.one()?;
        layer_ids.push((s.clone(), w, u, b));
    }
    let n_norms = if spec.batch_norm {
        spec.layers.len() - 1
    } else {
        0
    };
    let norms: Vec<(NodeId, NodeId)> = (0..n_norms)
        .map(|_| Ok((cur.one()?, cur.one()?)))
        .collect::<Result<_>>()?;
    let HeadSpec::Conv1x1 { activation } = spec.head else {
        unreachable!("validated")
    };
    let (hw, hb) = (cur.one()?, cur.one()?);
    cur.finish()?;

    let mut seq = x.to_vec();
    let mut norm_nodes = vec![Vec::new(); n_norms];
    for (l, (s, w, u, b)) in layer_ids.into_iter().enumerate() {
        let m = s.lags();
        if seq.len() <= m {
            return Err(Error::SeriesTooShort {
                required: m + 1,
                got: seq.len(),
            });
        }
        let mut out: Vec<NodeId> = Vec::with_capacity(seq.len() + 1 - m);
        // one step past the end: forecast of the next frame
        for t in m..=seq.len() {
            let mut terms: Vec<NodeId> = (0..s.p)
                .map(|i| g.conv2d_same(seq[t - i - 1], w[i]))
                .collect();
            for (j, &uj) in u.iter().enumerate() {
                if t >= m + j + 1 {
                    let prev = out[t - m - j - 1];
                    terms.push(g.conv2d_same(prev, uj));
                }
            }
            terms.push(b);
            let pre = sum_nodes(g, terms);
            out.push(if s.activation == Activation::Linear {
                pre
            } else {
                g.activate(s.activation, pre)
            });
        }
        if let Some(&(scale, shift)) = norms.get(l) {
            out = out
                .into_iter()
                .map(|h| {
                    let y = g.batch_norm(h, scale, shift, BN_EPS);
                    norm_nodes[l].push(y);
                    y
                })
                .collect();
        }
        seq = out;
    }
    let last = *seq.last().expect("non-empty");
    let y = g.conv2d_same(last, hw);
    let y = g.add(y, hb);
    let output = if activation == Activation::Linear {
        y
    } else {
        g.activate(activation, y)
    };
    Ok(FrameGraph { output, norm_nodes })
}
