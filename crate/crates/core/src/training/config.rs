use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
}

/// Segment whose full-pass loss drives early stopping, the plateau schedule
/// and best-weight restoration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    /// Held-out validation data, for forecasting.
    Val,
    /// The training data itself, for running an estimator to convergence.
    Train,
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// a validation improvement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub plateau: Option<PlateauConfig>,
    pub loss: LossKind,
    pub seed: u64,
    /// Series windows, lag warm-up included. Frame sequences are used whole.
    pub window_len: usize,
    /// Leading outputs of each window left out of the training loss while
    /// the feedback state settles from zero.
    pub washout: usize,
    pub monitor: Monitor,
    /// Keep a copy of the trainable parameters after every epoch.
    pub record_trajectory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            plateau: None,
            loss: LossKind::Mse,
            seed: 0,
            window_len: 50,
            washout: 0,
            monitor: Monitor::Val,
            record_trajectory: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// A learning rate of exactly 0 is accepted so a run can be replayed
    /// without moving the weights.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(Error::invalid(
                "Adam needs beta1, beta2 in [0, 1) and eps > 0",
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be positive"));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if let Some(p) = &self.plateau {
            if !(p.factor > 0.0 && p.factor < 1.0) || p.patience == 0 {
                return Err(Error::invalid(
                    "plateau factor must lie in (0, 1) with patience >= 1",
                ));
            }
        }
        Ok(())
    }
}
