use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Predictions are clipped into `[BCE_CLIP, 1 − BCE_CLIP]` before the log.
pub const BCE_CLIP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rmse,
    Mae,
    Bce,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Mae => "mae",
            MetricKind::Bce => "bce",
        }
    }
}

/// Averaged over every entry, so multivariate metrics pool all components.
pub fn metric(kind: MetricKind, predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            left: predictions.shape().to_vec(),
            right: targets.shape().to_vec(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::invalid("metric over zero entries"));
    }
    let pairs = predictions.data().iter().zip(targets.data());
    let n = predictions.len() as f64;
    Ok(match kind {
        MetricKind::Rmse => (pairs.map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n).sqrt(),
        MetricKind::Mae => pairs.map(|(p, y)| (p - y).abs()).sum::<f64>() / n,
        MetricKind::Bce => {
            -pairs
                .map(|(&p, &y)| {
                    let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                    y * p.ln() + (1.0 - y) * (1.0 - p).ln()
                })
                .sum::<f64>()
                / n
        }
    })
}

pub fn mse(predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    Ok(metric(MetricKind::Rmse, predictions, targets)?.powi(2))
}

/// Mean and sample standard deviation (`n − 1`); the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x)
    }

    #[test]
    fn rmse_of_known_pair() {
        let r = metric(MetricKind::Rmse, &v(&[1.0, 2.0]), &v(&[1.0, 4.0])).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mae_of_identical_is_zero() {
        let x = v(&[0.3, -1.0, 7.0]);
        assert_eq!(metric(MetricKind::Mae, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn bce_at_one_half_is_ln2() {
        let p = Tensor::full(&[4], 0.5);
        let y = v(&[0.0, 1.0, 1.0, 0.0]);
        assert!((metric(MetricKind::Bce, &p, &y).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_is_finite_at_saturation() {
        let b = metric(MetricKind::Bce, &v(&[0.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((b + BCE_CLIP.ln()).abs() < 1e-6);
    }

    #[test]
    fn scaling_errors_scales_rmse_and_mae() {
        let y = v(&[0.0, 1.0, -2.0]);
        let p = v(&[0.5, 0.0, -1.0]);
        let p3 = v(&[1.5, -2.0, 1.0]);
        for kind in [MetricKind::Rmse, MetricKind::Mae] {
            let a = metric(kind, &p, &y).unwrap();
            let b = metric(kind, &p3, &y).unwrap();
            assert!((b - 3.0 * a).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(metric(MetricKind::Rmse, &v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
