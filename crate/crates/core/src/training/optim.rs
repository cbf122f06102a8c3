use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. The step counter advances
/// before use, so the first call runs with `t = 1`.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam_step got {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * gj;
            vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = md[j] / c1;
            let vhat = vd[j] / c2;
            pd[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![Tensor::vector(&[1.0, -2.0])];
        let mut state = AdamState::new(&params);
        state.m[0] = Tensor::vector(&[0.5, 0.5]);
        state.v[0] = Tensor::vector(&[0.25, 0.25]);
        let before = params.clone();
        // lr 0 isolates the moment update
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut params, &[Tensor::zeros(&[2])], &mut state, &cfg).unwrap();
        assert_eq!(params, before);
        assert!((state.m[0].data()[0] - 0.45).abs() < 1e-15);
        assert!((state.v[0].data()[0] - 0.25 * 0.999).abs() < 1e-15);

        let mut params = before.clone();
        let mut fresh = AdamState::new(&params);
        adam_step(
            &mut params,
            &[Tensor::zeros(&[2])],
            &mut fresh,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_about_the_learning_rate() {
        let cfg = AdamConfig::default();
        let grads = vec![Tensor::vector(&[3.0, -1e-3, 42.0, -0.7])];
        let mut params = vec![Tensor::zeros(&[4])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for (p, g) in params[0].data().iter().zip(grads[0].data()) {
            assert!(p.abs() >= 0.99 * cfg.lr && p.abs() <= cfg.lr);
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr_sign() {
        let cfg = AdamConfig::default();
        let mut params = vec![Tensor::vector(&[0.0])];
        let mut state = AdamState::new(&params);
        let g = vec![Tensor::vector(&[-0.3])];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = params[0].data()[0];
            adam_step(&mut params, &g, &mut state, &cfg).unwrap();
            last = params[0].data()[0] - before;
        }
        assert!((last - cfg.lr).abs() < 1e-6 * cfg.lr * 100.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = vec![Tensor::vector(&[0.0])];
        let mut state = AdamState::new(&params);
        let err = adam_step(
            &mut params,
            &[Tensor::vector(&[f64::NAN])],
            &mut state,
            &AdamConfig::default(),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(state.t, 0);
    }
}
