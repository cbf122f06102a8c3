use super::*;
use crate::error::Error;
use crate::tensor::{Activation, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

#[test]
fn square_value_and_gradient() {
    let mut g = Graph::new();
    let x = g.parameter(Tensor::scalar(3.0));
    let y = g.square(x);
    assert_eq!(g.forward(&[]).unwrap().item(), 9.0);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn product_gradients_swap() {
    let mut g = Graph::new();
    let a = g.parameter(Tensor::scalar(2.0));
    let b = g.parameter(Tensor::scalar(5.0));
    let y = g.mul(a, b);
    g.forward(&[]).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(a).unwrap().item(), 5.0);
    assert_eq!(grads.get(b).unwrap().item(), 2.0);
}

#[test]
fn one_arma_step_by_substitution() {
    // alpha + beta*x_{t-1} - gamma*xhat_{t-1}
    let mut g = Graph::new();
    let x = g.input();
    let xhat = g.input();
    let beta = g.parameter(Tensor::from_rows(&[vec![0.5]]).unwrap());
    let gamma = g.parameter(Tensor::from_rows(&[vec![0.2]]).unwrap());
    let alpha = g.parameter(Tensor::vector(&[0.0]));
    let ar = g.matmul(x, beta);
    let ma = g.matmul(xhat, gamma);
    let pre = g.sub(ar, ma);
    let pre = g.add(pre, alpha);
    let _out = g.activate(Activation::Linear, pre);
    let bindings = [
        (x, Tensor::from_rows(&[vec![1.0]]).unwrap()),
        (xhat, Tensor::from_rows(&[vec![0.8]]).unwrap()),
    ];
    let v = g.forward(&bindings).unwrap().item();
    assert!((v - 0.34).abs() < 1e-15);
}

#[derive(Clone, Copy)]
enum RandOp {
    Add,
    Sub,
    Mul,
    Square,
    Tanh,
    Scale(f64),
}

/// Recursive evaluation straight from the recorded expression, no graph involved.
fn tree_walk(i: usize, leaves: &[Vec<f64>], ops: &[(RandOp, usize, usize)]) -> Vec<f64> {
    if i < leaves.len() {
        return leaves[i].clone();
    }
    let (op, a, b) = ops[i - leaves.len()];
    let va = tree_walk(a, leaves, ops);
    match op {
        RandOp::Add | RandOp::Sub | RandOp::Mul => {
            let vb = tree_walk(b, leaves, ops);
            va.iter()
                .zip(&vb)
                .map(|(x, y)| match op {
                    RandOp::Add => x + y,
                    RandOp::Sub => x - y,
                    _ => x * y,
                })
                .collect()
        }
        RandOp::Square => va.iter().map(|x| x * x).collect(),
        RandOp::Tanh => va.iter().map(|x| x.tanh()).collect(),
        RandOp::Scale(c) => va.iter().map(|x| x * c).collect(),
    }
}

#[test]
fn random_graphs_match_tree_walk() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let leaves: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut ids: Vec<NodeId> = leaves
            .iter()
            .map(|l| g.parameter(Tensor::vector(l)))
            .collect();
        let mut ops = Vec::new();
        while ids.len() < 20 {
            let a = rng.gen_range(0..ids.len());
            let b = rng.gen_range(0..ids.len());
            let op = match rng.gen_range(0..6) {
                0 => RandOp::Add,
                1 => RandOp::Sub,
                2 => RandOp::Mul,
                3 => RandOp::Square,
                4 => RandOp::Tanh,
                _ => RandOp::Scale(rng.gen_range(-1.5..1.5)),
            };
            let id = match op {
                RandOp::Add => g.add(ids[a], ids[b]),
                RandOp::Sub => g.sub(ids[a], ids[b]),
                RandOp::Mul => g.mul(ids[a], ids[b]),
                RandOp::Square => g.square(ids[a]),
                RandOp::Tanh => g.activate(Activation::Tanh, ids[a]),
                RandOp::Scale(c) => g.scale(ids[a], c),
            };
            ops.push((op, a, b));
            ids.push(id);
        }
        let got = g.forward(&[]).unwrap().clone();
        let want = tree_walk(19, &leaves, &ops);
        for (x, y) in got.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12, "seed {seed}: {x} vs {y}");
        }
    }
}

/// Finite-difference check of a single op applied to random parameters and
/// reduced by a random linear functional so every output coordinate matters.
fn check_op(
    shapes: &[&[usize]],
    ranges: &[(f64, f64)],
    seed: u64,
    build: impl Fn(&mut Graph, &[NodeId]) -> NodeId,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<Tensor> = shapes
        .iter()
        .zip(ranges)
        .map(|(s, &(lo, hi))| random(s, &mut rng, lo, hi))
        .collect();
    let probe_seed = rng.gen::<u64>();
    let report = grad_check(
        |g, ids| {
            let out = build(g, ids);
            let shape = {
                let mut probe = g.clone();
                probe.forward(&[])?.shape().to_vec()
            };
            let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
            let w = g.constant(random(&shape, &mut prng, -1.0, 1.0));
            let prod = g.mul(out, w);
            Ok(g.sum(prod))
        },
        &params,
        1e-6,
        1e-5,
    )
    .unwrap();
    assert!(report.pass, "max rel err {}", report.max_rel_err);
}

#[test]
fn every_op_matches_finite_differences() {
    let u = (-1.0, 1.0);
    let pos = (0.5, 2.0);
    check_op(&[&[3, 4], &[4, 2]], &[u, u], 1, |g, p| g.matmul(p[0], p[1]));
    check_op(&[&[2, 4, 4, 2], &[3, 3, 2, 2]], &[u, u], 2, |g, p| {
        g.conv2d_same(p[0], p[1])
    });
    check_op(&[&[4, 3], &[4, 3]], &[u, u], 3, |g, p| g.add(p[0], p[1]));
    check_op(&[&[4, 3], &[3]], &[u, u], 4, |g, p| g.add(p[0], p[1]));
    check_op(&[&[4, 3], &[3]], &[u, u], 5, |g, p| g.sub(p[0], p[1]));
    check_op(&[&[4, 3], &[4, 3]], &[u, u], 6, |g, p| g.mul(p[0], p[1]));
    check_op(&[&[4, 3], &[3]], &[u, u], 7, |g, p| g.mul(p[0], p[1]));
    for (i, act) in [
        Activation::Linear,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
    ]
    .into_iter()
    .enumerate()
    {
        check_op(&[&[5, 4]], &[u], 10 + i as u64, move |g, p| {
            g.activate(act, p[0])
        });
    }
    let mixed = [Activation::Linear, Activation::Relu, Activation::Tanh];
    check_op(&[&[4, 3]], &[u], 20, move |g, p| {
        g.activate_per_unit(&mixed, p[0])
    });
    check_op(&[&[4, 3]], &[u], 21, |g, p| g.sum(p[0]));
    check_op(&[&[4, 3]], &[u], 22, |g, p| g.mean(p[0]));
    check_op(&[&[4, 3]], &[u], 23, |g, p| g.square(p[0]));
    check_op(&[&[4, 3]], &[pos], 24, |g, p| g.log(p[0]));
    check_op(&[&[4, 3]], &[u], 25, |g, p| g.clip(p[0], -0.5, 0.5));
    check_op(&[&[4, 3]], &[u], 26, |g, p| g.scale(p[0], -2.5));
    check_op(&[&[4, 3]], &[u], 27, |g, p| g.transpose(p[0]));
    check_op(&[&[4, 3]], &[u], 28, |g, p| g.reshape(p[0], &[2, 6]));
    check_op(&[&[3, 2, 2, 4], &[4], &[4]], &[u, pos, u], 29, |g, p| {
        g.batch_norm(p[0], p[1], p[2], 1e-5)
    });
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let a0 = random(&[3, 3], &mut rng, -1.0, 1.0);
    let b0 = random(&[3, 2], &mut rng, -1.0, 1.0);
    let build = |which: u8| {
        let mut g = Graph::new();
        let a = g.parameter(a0.clone());
        let b = g.parameter(b0.clone());
        let m = g.matmul(a, b);
        let l1 = {
            let t = g.activate(Activation::Tanh, m);
            let s = g.square(t);
            g.mean(s)
        };
        let l2 = {
            let s = g.scale(m, 0.7);
            g.sum(s)
        };
        let root = match which {
            0 => l1,
            1 => l2,
            _ => g.add(l1, l2),
        };
        g.forward(&[]).unwrap();
        g.backward(root).unwrap().into_tensors()
    };
    let (g1, g2, g12) = (build(0), build(1), build(2));
    for ((x, y), z) in g1.iter().zip(&g2).zip(&g12) {
        for ((a, b), c) in x.data().iter().zip(y.data()).zip(z.data()) {
            assert!((a + b - c).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = random(&[2, 5, 5, 1], &mut rng, -1.0, 1.0);
    let k = random(&[3, 3, 1, 3], &mut rng, -1.0, 1.0);
    let run = || {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let ki = g.parameter(k.clone());
        let c = g.conv2d_same(xi, ki);
        let s = g.activate(Activation::Sigmoid, c);
        let l = g.mean(s);
        g.forward(&[]).unwrap();
        g.backward(l).unwrap().into_tensors()
    };
    let (a, b) = (run(), run());
    assert!(a[0]
        .data()
        .iter()
        .zip(b[0].data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn constant_loss_has_zero_gradients() {
    let mut g = Graph::new();
    let p = g.parameter(Tensor::vector(&[1.0, 2.0]));
    let c = g.constant(Tensor::scalar(4.0));
    let l = g.square(c);
    g.forward(&[]).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0]);

    let report = grad_check(
        |g, _| {
            let c = g.constant(Tensor::scalar(1.5));
            Ok(g.square(c))
        },
        &[Tensor::vector(&[0.3, -0.2])],
        1e-6,
        1e-12,
    )
    .unwrap();
    assert_eq!(report.max_rel_err, 0.0);
}

#[test]
fn adjoint_shapes_follow_values() {
    let mut g = Graph::new();
    let a = g.parameter(Tensor::zeros(&[2, 3]));
    let b = g.parameter(Tensor::zeros(&[3, 4]));
    let unused = g.parameter(Tensor::zeros(&[5]));
    let m = g.matmul(a, b);
    let l = g.sum(m);
    g.forward(&[]).unwrap();
    g.backward(l).unwrap();
    for id in [a, b, unused, m, l] {
        assert_eq!(g.adjoint(id).unwrap().shape(), g.value(id).unwrap().shape());
    }
}

#[test]
fn error_paths() {
    let mut g = Graph::new();
    let x = g.input();
    let s = g.square(x);
    assert!(matches!(g.forward(&[]), Err(Error::UnboundInput(0))));
    assert!(matches!(g.backward(s), Err(Error::BackwardBeforeForward)));

    g.forward(&[(x, Tensor::vector(&[1.0, 2.0]))]).unwrap();
    assert!(matches!(g.backward(s), Err(Error::NonScalarLoss { .. })));

    let mut g = Graph::new();
    let a = g.parameter(Tensor::zeros(&[2, 3]));
    let b = g.parameter(Tensor::zeros(&[2, 3]));
    let _ = g.matmul(a, b);
    match g.forward(&[]) {
        Err(Error::Node { node, op, .. }) => {
            assert_eq!(node, 2);
            assert_eq!(op, "matmul");
        }
        other => panic!("expected node error, got {other:?}"),
    }

    assert!(grad_check(|g, p| Ok(g.sum(p[0])), &[Tensor::scalar(1.0)], 1e-2, 1e-5).is_err());
}
