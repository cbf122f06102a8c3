//! Same-padded 2D cross-correlation over channels-last tensors.

use super::Tensor;
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dDims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv2dDims {
    /// Accepts `[H×W×C]` or `[N×H×W×C]` inputs and `[k1×k2×C_in×C_out]` kernels.
    pub fn infer(input: &[usize], kernel: &[usize]) -> Result<Self> {
        let (n, h, w, cin) = match *input {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => {
                return Err(Error::invalid(format!(
                    "conv2d_same input must be [H×W×C] or [N×H×W×C], got {input:?}"
                )))
            }
        };
        let [kh, kw, kc, cout] = *kernel else {
            return Err(Error::invalid(format!(
                "conv2d_same kernel must be rank 4, got {kernel:?}"
            )));
        };
        if kc != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d_same (channels)",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d_same needs odd kernel sizes, got {kh}×{kw}"
            )));
        }
        Ok(Conv2dDims {
            n,
            h,
            w,
            cin,
            cout,
            kh,
            kw,
        })
    }

    fn image_in(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn image_out(&self) -> usize {
        self.h * self.w * self.cout
    }

    /// Yields `(y, x, dy, dx, yy, xx)` for every in-bounds tap of a same-padded window.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for y in 0..self.h {
            for dy in 0..self.kh {
                let Some(yy) = (y + dy).checked_sub(ph).filter(|&v| v < self.h) else {
                    continue;
                };
                for x in 0..self.w {
                    for dx in 0..self.kw {
                        let Some(xx) = (x + dx).checked_sub(pw).filter(|&v| v < self.w) else {
                            continue;
                        };
                        f(y, x, dy, dx, yy, xx);
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) with symmetric zero padding so the
/// spatial extent is preserved. Input `[H×W×C_in]` or `[N×H×W×C_in]`,
/// kernel `[k1×k2×C_in×C_out]` with odd `k1`, `k2`.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let d = Conv2dDims::infer(input.shape(), kernel.shape())?;
    let mut out = vec![0.0; d.n * d.image_out()];
    let (x_data, k_data) = (input.data(), kernel.data());
    parallel::for_each_chunk_mut(&mut out, d.image_out(), |b, o| {
        let img = &x_data[b * d.image_in()..(b + 1) * d.image_in()];
        d.taps(|y, x, dy, dx, yy, xx| {
            let src = &img[(yy * d.w + xx) * d.cin..][..d.cin];
            let dst = &mut o[(y * d.w + x) * d.cout..][..d.cout];
            let k_tap = &k_data[(dy * d.kw + dx) * d.cin * d.cout..];
            for (ci, &v) in src.iter().enumerate() {
                let krow = &k_tap[ci * d.cout..][..d.cout];
                for (o, &kv) in dst.iter_mut().zip(krow) {
                    *o += v * kv;
                }
            }
        });
    });
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank checked") = d.cout;
    Ok(Tensor::from_parts(shape, out))
}

/// Vector-Jacobian product of [`conv2d_same`] with respect to its input.
pub(crate) fn conv2d_same_input_grad(d: &Conv2dDims, kernel: &[f64], upstream: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; d.n * d.image_in()];
    parallel::for_each_chunk_mut(&mut grad, d.image_in(), |b, g| {
        let up = &upstream[b * d.image_out()..(b + 1) * d.image_out()];
        d.taps(|y, x, dy, dx, yy, xx| {
            let u = &up[(y * d.w + x) * d.cout..][..d.cout];
            let dst = &mut g[(yy * d.w + xx) * d.cin..][..d.cin];
            let k_tap = &kernel[(dy * d.kw + dx) * d.cin * d.cout..];
            for (ci, gv) in dst.iter_mut().enumerate() {
                let krow = &k_tap[ci * d.cout..][..d.cout];
                *gv += krow.iter().zip(u).map(|(k, u)| k * u).sum::<f64>();
            }
        });
    });
    grad
}

/// Vector-Jacobian product of [`conv2d_same`] with respect to its kernel.
pub(crate) fn conv2d_same_kernel_grad(d: &Conv2dDims, input: &[f64], upstream: &[f64]) -> Vec<f64> {
    let ksize = d.kh * d.kw * d.cin * d.cout;
    let images: Vec<usize> = (0..d.n).collect();
    let partials = parallel::map(&images, |&b| {
        let img = &input[b * d.image_in()..(b + 1) * d.image_in()];
        let up = &upstream[b * d.image_out()..(b + 1) * d.image_out()];
        let mut g = vec![0.0; ksize];
        d.taps(|y, x, dy, dx, yy, xx| {
            let u = &up[(y * d.w + x) * d.cout..][..d.cout];
            let src = &img[(yy * d.w + xx) * d.cin..][..d.cin];
            let g_tap = &mut g[(dy * d.kw + dx) * d.cin * d.cout..];
            for (ci, &v) in src.iter().enumerate() {
                for (gv, &uv) in g_tap[ci * d.cout..][..d.cout].iter_mut().zip(u) {
                    *gv += v * uv;
                }
            }
        });
        g
    });
    let mut total = vec![0.0; ksize];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}
