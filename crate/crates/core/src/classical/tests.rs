use super::*;
use crate::cells::arma::arma_layer_forward;
use crate::datagen::{simulate, ArmaProcess, DgpSpec, Process, VarmaProcess};

fn arma_series(beta: &[f64], gamma: &[f64], n: usize, seed: u64) -> Tensor {
    let spec = DgpSpec::new(Process::Arma(ArmaProcess {
        alpha: 0.0,
        beta: beta.to_vec(),
        gamma: gamma.to_vec(),
    }));
    simulate(&spec, n, seed).unwrap()
}

fn flat_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

#[test]
fn white_noise_gives_near_zero_ar_coefficient() {
    let x = arma_series(&[], &[], 5000, 11);
    let fit = fit_css(&x, 1, 0).unwrap();
    assert!(fit.coefs.beta[0][0][0].abs() < 0.03, "{:?}", fit.coefs);
    assert!((fit.coefs.sigma2[0][0] - 1.0).abs() < 0.06);
}

#[test]
fn recovers_arma21() {
    let x = arma_series(&[0.1, 0.3], &[-0.4], 25_000, 3);
    let fit = fit_css(&x, 2, 1).unwrap();
    let c = &fit.coefs;
    let got = [c.beta[0][0][0], c.beta[1][0][0], c.gamma[0][0][0]];
    assert!(flat_close(&got, &[0.1, 0.3, -0.4], 0.05), "{got:?}");
    assert!(c.alpha[0].abs() < 0.05);
    assert!(fit.warnings.is_empty(), "{:?}", fit.warnings);
    assert_eq!(fit.starts.len(), 5);
}

#[test]
fn recovers_varma11() {
    let proc = VarmaProcess::default();
    let x = simulate(&DgpSpec::new(Process::Varma(proc.clone())), 20_000, 5).unwrap();
    let fit = fit_css(&x, 1, 1).unwrap();
    let want: Vec<f64> = proc.b[0]
        .iter()
        .chain(&proc.gamma[0])
        .flatten()
        .copied()
        .collect();
    let got: Vec<f64> = fit.coefs.beta[0]
        .iter()
        .chain(&fit.coefs.gamma[0])
        .flatten()
        .copied()
        .collect();
    assert!(flat_close(&got, &want, 0.05), "{got:?} vs {want:?}");
}

#[test]
fn objective_never_increases() {
    let x = arma_series(&[0.5], &[0.3], 2000, 1);
    let fit = fit_css(&x, 1, 1).unwrap();
    assert!(fit.trajectory.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.iterations > 0);
    assert_eq!(*fit.trajectory.last().unwrap(), fit.css);
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    let x = simulate(
        &DgpSpec::new(Process::Varma(VarmaProcess::default())),
        200,
        2,
    )
    .unwrap();
    let css = Css {
        x: x.data(),
        t_len: 200,
        k: 2,
        p: 2,
        q: 2,
    };
    let theta: Vec<f64> = (0..css.n_params())
        .map(|i| 0.05 * ((i * 7 % 11) as f64 - 5.0))
        .collect();
    let (_, grad) = css.loss_and_grad(&theta);
    let h = 1e-6;
    for i in 0..theta.len() {
        let (mut up, mut dn) = (theta.clone(), theta.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (css.loss(&up) - css.loss(&dn)) / (2.0 * h);
        assert!(
            (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
            "param {i}: {fd} vs {}",
            grad[i]
        );
    }
}

#[test]
fn forecast_matches_folded_cell() {
    let x = arma_series(&[0.1, 0.3], &[-0.4], 500, 9);
    let cases = [
        ArmaCoefficients::univariate(0.2, &[0.1, 0.3], &[-0.4]),
        ArmaCoefficients::univariate(0.0, &[0.5], &[0.2, -0.1, 0.05]),
        ArmaCoefficients::univariate(-0.1, &[], &[0.6]),
        ArmaCoefficients::univariate(0.0, &[0.9], &[]),
    ];
    for c in cases {
        let cell = arma_layer_forward(&fold(&c).unwrap(), &x).unwrap();
        let classical = forecast(&c, &x).unwrap();
        assert_eq!(classical.shape(), cell.shape());
        assert!(classical.max_abs_diff(&cell) < 1e-10, "{c:?}");
    }
}

#[test]
fn unit_root_forecast_repeats_last_value() {
    let x = arma_series(&[0.5], &[], 50, 0);
    let f = forecast(&ArmaCoefficients::univariate(0.0, &[1.0], &[]), &x).unwrap();
    for t in 1..50 {
        assert_eq!(f.data()[t - 1], x.data()[t - 1]);
    }
}

#[test]
fn zero_moving_average_is_constant() {
    let x = arma_series(&[0.5], &[], 50, 0);
    let f = forecast(&ArmaCoefficients::univariate(1.5, &[], &[0.0]), &x).unwrap();
    assert!(f.data().iter().all(|&v| v == 1.5));
}

#[test]
fn fold_unfold_roundtrip() {
    let c = ArmaCoefficients {
        alpha: vec![0.1, -0.2],
        beta: vec![vec![vec![0.1, 0.2], vec![0.3, 0.4]]],
        gamma: vec![
            vec![vec![-0.1, 0.0], vec![0.5, 0.2]],
            vec![vec![0.0, 0.1], vec![0.1, 0.0]],
        ],
        sigma2: zeros(2),
    };
    let folded = fold(&c).unwrap();
    assert_eq!(folded.lag_weights.len(), 2);
    assert!((folded.lag_weights[0].get(&[1, 0]) - 0.8).abs() < 1e-15);
    assert_eq!(folded.lag_weights[1].get(&[0, 1]), 0.1);
    let back = unfold(&folded).unwrap();
    assert_eq!(back.p(), 1);
    assert_eq!(back.q(), 2);
    assert!(flat_close(&back.to_flat(), &c.to_flat(), 1e-15));
}

#[test]
fn coefficients_roundtrip_through_json() {
    let c = ArmaCoefficients::univariate(0.3, &[0.1, 0.2], &[-0.4]);
    let s = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<ArmaCoefficients>(&s).unwrap(), c);
}

#[test]
fn explosive_fit_is_flagged() {
    let c = ArmaCoefficients::univariate(0.0, &[1.2], &[-1.5]);
    let w = root_warnings(&c);
    assert_eq!(w.len(), 2, "{w:?}");
    assert!(root_warnings(&ArmaCoefficients::univariate(0.0, &[0.5, 0.3], &[0.4])).is_empty());
}

#[test]
fn spectral_radius_of_known_matrix() {
    // eigenvalues 0.9 and 0.5
    let a = vec![vec![0.9, 1.0], vec![0.0, 0.5]];
    assert!((spectral_radius(&a) - 0.9).abs() < 0.01);
}

#[test]
fn short_series_is_rejected() {
    let x = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
    assert!(matches!(
        fit_css(&x, 2, 1),
        Err(Error::SeriesTooShort { .. })
    ));
}
