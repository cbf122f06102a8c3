//! Dense row-major `f64` tensors and the handful of operations the cells need.
//!
//! A [`Tensor`] is an immutable value once built: every operation returns a new
//! tensor. Rank-0 tensors (empty shape) are scalars.

mod conv;
pub mod io;

pub use conv::conv2d_same;
pub(crate) use conv::{conv2d_same_input_grad, conv2d_same_kernel_grad, Conv2dDims};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor without validation. Callers guarantee `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(Vec::new(), vec![value])
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor::from_parts(vec![values.len()], values.to_vec())
    }

    /// Builds a rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds on axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        let start = index * inner;
        Tensor::from_parts(
            self.shape[1..].to_vec(),
            self.data[start..start + inner].to_vec(),
        )
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_axis0(&self, start: usize, end: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::from_parts(shape, self.data[start * inner..end * inner].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "{op} expects a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    /// The ReLU derivative at exactly zero is 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
}

impl EwOp {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            EwOp::Add => a + b,
            EwOp::Sub => a - b,
            EwOp::Mul => a * b,
        }
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            EwOp::Add => "add",
            EwOp::Sub => "sub",
            EwOp::Mul => "mul",
        }
    }
}

/// How `b` lines up with `a` in an elementwise op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is a vector matching the trailing axis of `a`.
    Trailing,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 && a.last() == Some(&b[0]) {
        return Ok(Broadcast::Trailing);
    }
    Err(Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    })
}

/// Elementwise `a op b`; `b` may also be a vector broadcast over the last axis of `a`.
pub fn ew(op: EwOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let data = match broadcast_kind(op.name(), &a.shape, &b.shape)? {
        Broadcast::Same => a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| op.eval(x, y))
            .collect(),
        Broadcast::Trailing => {
            let c = b.data.len();
            a.data
                .chunks_exact(c)
                .flat_map(|row| row.iter().zip(&b.data).map(|(&x, &y)| op.eval(x, y)))
                .collect()
        }
    };
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

pub fn apply(act: Activation, a: &Tensor) -> Tensor {
    a.map(|v| act.eval(v))
}

/// Applies `acts[c]` to every element whose trailing index is `c`.
pub fn apply_per_unit(acts: &[Activation], a: &Tensor) -> Result<Tensor> {
    if acts.len() == 1 {
        return Ok(apply(acts[0], a));
    }
    if a.shape.last() != Some(&acts.len()) {
        return Err(Error::invalid(format!(
            "{} activations for trailing axis of shape {:?}",
            acts.len(),
            a.shape
        )));
    }
    let data = a
        .data
        .chunks_exact(acts.len())
        .flat_map(|row| row.iter().zip(acts).map(|(&v, act)| act.eval(v)))
        .collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

/// Standard matrix product of `[m×k]` and `[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out += a · b` for row-major slices.
#[inline]
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out[i * n + j] = s;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let i2 = Tensor::identity(2);
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&i2, &b).unwrap(), b);

        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn elementwise_and_broadcast() {
        let a = Tensor::vector(&[1.0, 2.0]);
        let b = Tensor::vector(&[3.0, 4.0]);
        assert_eq!(ew(EwOp::Add, &a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(
            apply(Activation::Relu, &Tensor::vector(&[-1.0, 0.0, 2.0])).data(),
            &[0.0, 0.0, 2.0]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[8, 8, 4], &mut rng);
        let bias = Tensor::vector(&[1.0, -2.0, 0.5, 3.0]);
        let y = ew(EwOp::Add, &x, &bias).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                for c in 0..4 {
                    assert_eq!(y.get(&[i, j, c]), x.get(&[i, j, c]) + bias.data()[c]);
                }
            }
        }
        assert!(ew(EwOp::Add, &x, &Tensor::vector(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn activation_ranges() {
        for v in [-30.0, -1.0, 0.0, 0.3, 25.0] {
            assert_eq!(Activation::Linear.eval(v), v);
            assert_eq!(Activation::Relu.eval(v), v.max(0.0));
            let s = Activation::Sigmoid.eval(v);
            assert!(s > 0.0 && s < 1.0);
            let t = Activation::Tanh.eval(v);
            assert!(t > -1.0 && t < 1.0 || v.abs() > 19.0);
        }
        assert_eq!(Activation::Relu.derivative(0.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn matmul_agrees_with_naive(m in 1usize..10, k in 1usize..10, n in 1usize..10, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            prop_assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
            prop_assert_eq!(matmul(&Tensor::identity(m), &a).unwrap(), a.clone());
            prop_assert_eq!(matmul(&a, &Tensor::identity(k)).unwrap(), a);
        }
    }
}
