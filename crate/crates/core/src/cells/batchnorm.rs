use serde::{Deserialize, Serialize};

use crate::autodiff::batch_norm_train;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel affine normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            scale: Tensor::full(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Folds a batch's statistics into the running averages.
    pub fn update_running(&mut self, mean: &Tensor, var: &Tensor) {
        let blend = |run: &Tensor, batch: &Tensor| {
            let data = run
                .data()
                .iter()
                .zip(batch.data())
                .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
                .collect();
            Tensor::from_parts(run.shape().to_vec(), data)
        };
        self.running_mean = blend(&self.running_mean, mean);
        self.running_var = blend(&self.running_var, var);
    }

    /// Normalizes with the running statistics.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: x.shape().to_vec(),
                right: vec![c],
            });
        }
        let coef: Vec<(f64, f64)> = (0..c)
            .map(|ch| {
                let inv = 1.0 / (self.running_var.data()[ch] + BN_EPS).sqrt();
                let a = self.scale.data()[ch] * inv;
                (a, self.shift.data()[ch] - a * self.running_mean.data()[ch])
            })
            .collect();
        let data = x
            .data()
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(&coef).map(|(v, (a, b))| a * v + b))
            .collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }
}

/// Batch normalization of `[N×H×W×c]` activations. Train mode uses batch
/// statistics (ε = 1e-5) and updates the running averages with momentum
/// 0.99; eval mode uses the running averages.
pub fn batch_norm_forward(
    x: &Tensor,
    params: &mut BatchNormParams,
    mode: BnMode,
) -> Result<Tensor> {
    match mode {
        BnMode::Eval => params.eval(x),
        BnMode::Train => {
            if x.rank() < 2 || x.shape()[0] < 2 {
                return Err(Error::invalid(format!(
                    "train-mode batch norm needs N >= 2, got shape {:?}",
                    x.shape()
                )));
            }
            let (y, mean, var) = batch_norm_train(x, &params.scale, &params.shift, BN_EPS)?;
            params.update_running(&mean, &var);
            Ok(y)
        }
    }
}
