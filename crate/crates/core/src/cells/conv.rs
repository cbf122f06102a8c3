//! ConvARMA: the ARMA recursion with convolutions in place of matrix products.
//!
//! ```text
//! X̂_t = σ( Σ_{i=1}^{p} W_i ⋆ X_{t−i} + Σ_{j=1}^{q} U_j ⋆ X̂_{t−j} + b )
//! ```
//!
//! Unlike the scalar cell the feedback term is added, so a ConvARMA cell with
//! `1×1` kernels on a `1×1` grid equals an ARMA cell with `Γ_j = −U_j`.

use serde::{Deserialize, Serialize};

use super::arma::CellState;
use crate::error::{Error, Result};
use crate::tensor::{apply, conv2d_same, ew, Activation, EwOp, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvArmaSpec {
    pub p: usize,
    pub q: usize,
    pub filters: usize,
    /// Odd spatial kernel size `[k1, k2]`.
    pub kernel: [usize; 2],
    pub activation: Activation,
}

impl ConvArmaSpec {
    pub fn lags(&self) -> usize {
        self.p.max(self.q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.p == 0 {
            return Err(Error::invalid(
                "ConvARMA needs p > 0 and at least one filter",
            ));
        }
        if self.kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(format!(
                "kernel {:?} must be odd",
                self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvArmaParams {
    pub p: usize,
    pub q: usize,
    pub in_channels: usize,
    pub filters: usize,
    /// `p` kernels `[k1×k2×in_channels×filters]`.
    pub input_kernels: Vec<Tensor>,
    /// `q` kernels `[k1×k2×filters×filters]`.
    pub feedback_kernels: Vec<Tensor>,
    /// Shape `[filters]`, broadcast over the grid.
    pub bias: Tensor,
    pub activation: Activation,
}

impl ConvArmaParams {
    pub fn zeros(spec: &ConvArmaSpec, in_channels: usize) -> Result<Self> {
        spec.validate()?;
        let [k1, k2] = spec.kernel;
        let c = spec.filters;
        Ok(ConvArmaParams {
            p: spec.p,
            q: spec.q,
            in_channels,
            filters: c,
            input_kernels: vec![Tensor::zeros(&[k1, k2, in_channels, c]); spec.p],
            feedback_kernels: vec![Tensor::zeros(&[k1, k2, c, c]); spec.q],
            bias: Tensor::zeros(&[c]),
            activation: spec.activation,
        })
    }

    pub fn lags(&self) -> usize {
        self.p.max(self.q)
    }

    pub fn kernel_size(&self) -> [usize; 2] {
        let s = self.input_kernels[0].shape();
        [s[0], s[1]]
    }

    pub fn spec(&self) -> ConvArmaSpec {
        ConvArmaSpec {
            p: self.p,
            q: self.q,
            filters: self.filters,
            kernel: self.kernel_size(),
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_kernels.len() != self.p || self.feedback_kernels.len() != self.q {
            return Err(Error::invalid(format!(
                "ConvARMA({}, {}) has {} input and {} feedback kernels",
                self.p,
                self.q,
                self.input_kernels.len(),
                self.feedback_kernels.len()
            )));
        }
        let [k1, k2] = self.kernel_size();
        let (n, c) = (self.in_channels, self.filters);
        for w in &self.input_kernels {
            if w.shape() != [k1, k2, n, c] {
                return Err(mismatch("input kernel", &[k1, k2, n, c], w.shape()));
            }
        }
        for u in &self.feedback_kernels {
            if u.shape() != [k1, k2, c, c] {
                return Err(mismatch("feedback kernel", &[k1, k2, c, c], u.shape()));
            }
        }
        if self.bias.shape() != [c] {
            return Err(mismatch("bias", &[c], self.bias.shape()));
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, want: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: want.to_vec(),
        right: got.to_vec(),
    }
}

/// One ConvARMA step. `frame_lags[i]` is `X_{t−i−1}` (`[H×W×n_d]`); the
/// state holds the `q` previous `[H×W×c]` predictions.
pub fn conv_arma_step(
    params: &ConvArmaParams,
    frame_lags: &[Tensor],
    state: &CellState,
) -> Result<(Tensor, CellState)> {
    if frame_lags.len() != params.p {
        return Err(Error::invalid(format!(
            "expected {} lagged frames, got {}",
            params.p,
            frame_lags.len()
        )));
    }
    if state.len() != params.q {
        return Err(Error::invalid(format!(
            "state holds {} frames, cell has q = {}",
            state.len(),
            params.q
        )));
    }
    let spatial = &frame_lags[0].shape()[..2];
    let mut acc: Option<Tensor> = None;
    let mut add = |t: Tensor| -> Result<()> {
        acc = Some(match acc.take() {
            None => t,
            Some(a) => ew(EwOp::Add, &a, &t)?,
        });
        Ok(())
    };
    for (x, w) in frame_lags.iter().zip(&params.input_kernels) {
        if x.rank() != 3 || &x.shape()[..2] != spatial {
            return Err(mismatch(
                "conv_arma_step frame",
                frame_lags[0].shape(),
                x.shape(),
            ));
        }
        add(conv2d_same(x, w)?)?;
    }
    for (j, u) in params.feedback_kernels.iter().enumerate() {
        let prev = state.get(j);
        if prev.rank() != 3 || &prev.shape()[..2] != spatial {
            return Err(mismatch("conv_arma_step state", spatial, prev.shape()));
        }
        add(conv2d_same(prev, u)?)?;
    }
    let pre = ew(EwOp::Add, &acc.expect("p > 0"), &params.bias)?;
    let out = apply(params.activation, &pre);
    let next = state.pushed(out.clone());
    Ok((out, next))
}

/// Runs the cell over `frames` (`[T×H×W×n_d]`) from a zero state. Emits the
/// predictions for `t = max(p,q) .. T`, plus one past the end when
/// `one_past` is set.
pub fn conv_arma_layer_forward(
    params: &ConvArmaParams,
    frames: &Tensor,
    one_past: bool,
) -> Result<Tensor> {
    params.validate()?;
    let &[t_len, h, w, n_d] = frames.shape() else {
        return Err(Error::invalid(format!(
            "frames must be [T×H×W×C], got {:?}",
            frames.shape()
        )));
    };
    if n_d != params.in_channels {
        return Err(mismatch("frame channels", &[params.in_channels], &[n_d]));
    }
    let m = params.lags();
    if t_len <= m {
        return Err(Error::SeriesTooShort {
            required: m + 1,
            got: t_len,
        });
    }
    let end = if one_past { t_len + 1 } else { t_len };
    let mut state = CellState::zeros(params.q, &[h, w, params.filters]);
    let mut outs = Vec::with_capacity(end - m);
    for t in m..end {
        let lags: Vec<Tensor> = (0..params.p)
            .map(|i| frames.index_axis0(t - i - 1))
            .collect();
        let (pred, next) = conv_arma_step(params, &lags, &state)?;
        outs.push(pred);
        state = next;
    }
    Tensor::stack(&outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::arma::{arma_layer_forward, ArmaLayerParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_repeats_last_frame() {
        let spec = ConvArmaSpec {
            p: 1,
            q: 0,
            filters: 1,
            kernel: [1, 1],
            activation: Activation::Linear,
        };
        let mut params = ConvArmaParams::zeros(&spec, 1).unwrap();
        params.input_kernels[0] = Tensor::full(&[1, 1, 1, 1], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames = random(&[5, 4, 6, 1], &mut rng, 1.0);
        let out = conv_arma_layer_forward(&params, &frames, true).unwrap();
        for t in 1..=5 {
            assert_eq!(out.index_axis0(t - 1), frames.index_axis0(t - 1));
        }
    }

    #[test]
    fn degenerates_to_scalar_cell_with_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ConvArmaSpec {
            p: 2,
            q: 2,
            filters: 1,
            kernel: [1, 1],
            activation: Activation::Linear,
        };
        let mut params = ConvArmaParams::zeros(&spec, 1).unwrap();
        let w = [0.3, -0.2];
        let u = [0.25, 0.1];
        for i in 0..2 {
            params.input_kernels[i] = Tensor::full(&[1, 1, 1, 1], w[i]);
            params.feedback_kernels[i] = Tensor::full(&[1, 1, 1, 1], u[i]);
        }
        params.bias = Tensor::vector(&[0.05]);
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let frames = Tensor::new(vec![300, 1, 1, 1], x.clone()).unwrap();
        let conv = conv_arma_layer_forward(&params, &frames, false).unwrap();
        let scalar =
            ArmaLayerParams::scalar(2, 2, 0.05, &w, &[-u[0], -u[1]], Activation::Linear).unwrap();
        let reference =
            arma_layer_forward(&scalar, &Tensor::new(vec![300, 1], x).unwrap()).unwrap();
        let diff = conv
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    /// Per-pixel loops over the explicit recursion.
    fn naive_conv_arma(params: &ConvArmaParams, frames: &Tensor) -> Vec<f64> {
        let (t_len, h, w, n_d) = (
            frames.shape()[0],
            frames.shape()[1],
            frames.shape()[2],
            frames.shape()[3],
        );
        let c = params.filters;
        let [k1, k2] = params.kernel_size();
        let (r1, r2) = ((k1 / 2) as isize, (k2 / 2) as isize);
        let m = params.lags();
        let mut preds: Vec<Vec<f64>> = Vec::new();
        for t in m..t_len {
            let mut out = vec![0.0; h * w * c];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    for co in 0..c {
                        let mut s = params.bias.data()[co];
                        for dy in -r1..=r1 {
                            for dx in -r2..=r2 {
                                let (yy, xx) = (y + dy, x + dx);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let (ky, kx) = ((dy + r1) as usize, (dx + r2) as usize);
                                for i in 0..params.p {
                                    for ci in 0..n_d {
                                        s += params.input_kernels[i].get(&[ky, kx, ci, co])
                                            * frames.get(&[
                                                t - i - 1,
                                                yy as usize,
                                                xx as usize,
                                                ci,
                                            ]);
                                    }
                                }
                                for j in 0..params.q {
                                    let idx = (t - m) as isize - j as isize - 1;
                                    if idx < 0 {
                                        continue;
                                    }
                                    for ci in 0..c {
                                        s += params.feedback_kernels[j].get(&[ky, kx, ci, co])
                                            * preds[idx as usize]
                                                [((yy as usize) * w + xx as usize) * c + ci];
                                    }
                                }
                            }
                        }
                        out[((y as usize) * w + x as usize) * c + co] = params.activation.eval(s);
                    }
                }
            }
            preds.push(out);
        }
        preds.concat()
    }

    #[test]
    fn matches_per_pixel_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvArmaSpec {
            p: 2,
            q: 1,
            filters: 3,
            kernel: [3, 3],
            activation: Activation::Tanh,
        };
        let mut params = ConvArmaParams::zeros(&spec, 2).unwrap();
        for k in params
            .input_kernels
            .iter_mut()
            .chain(params.feedback_kernels.iter_mut())
        {
            *k = random(k.shape(), &mut rng, 0.3);
        }
        params.bias = random(&[3], &mut rng, 0.1);
        let frames = random(&[7, 6, 6, 2], &mut rng, 1.0);
        let got = conv_arma_layer_forward(&params, &frames, false).unwrap();
        let want = naive_conv_arma(&params, &frames);
        let diff = got
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn spatial_mismatch_is_rejected() {
        let spec = ConvArmaSpec {
            p: 1,
            q: 1,
            filters: 2,
            kernel: [3, 3],
            activation: Activation::Linear,
        };
        let params = ConvArmaParams::zeros(&spec, 1).unwrap();
        let state = CellState::zeros(1, &[5, 5, 2]);
        assert!(conv_arma_step(&params, &[Tensor::zeros(&[4, 4, 1])], &state).is_err());
        let even = ConvArmaSpec {
            kernel: [2, 3],
            ..spec
        };
        assert!(ConvArmaParams::zeros(&even, 1).is_err());
    }
}
