use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Builds `op` on the parameters, then contracts the output with fixed random
/// weights so every output coordinate matters. Returns the max relative error.
fn check_op<F>(seed: u64, shapes: &[Vec<usize>], op: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, s) in shapes.iter().enumerate() {
        store.add(format!("p{i}"), rand_tensor(&mut rng, s));
    }
    let wseed = rng.random::<u64>();
    let build = |store: &ParamStore| -> Result<(f64, Gradients), AutodiffError> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
        let out = op(&mut g, &vars)?;
        let mut wr = ChaCha8Rng::seed_from_u64(wseed);
        let w = rand_tensor(&mut wr, g.shape(out));
        let w = g.input(w)?;
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod)?;
        Ok((g.value(loss).item(), g.backward(loss)?))
    };
    let (_, grads) = build(&store).unwrap();
    grad_check(|s| build(s).map(|r| r.0), &store, &grads, 1e-5).unwrap()
}

const TOL: f64 = 1e-4;

fn dim() -> impl Strategy<Value = usize> {
    1usize..5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_matmul(seed in any::<u64>(), b in dim(), m in dim(), k in dim(), n in dim()) {
        let e = check_op(seed, &[vec![b, m, k], vec![k, n]], |g, v| g.matmul(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_bmm(seed in any::<u64>(), b in dim(), m in dim(), k in dim(), n in dim()) {
        let e = check_op(seed, &[vec![b, m, k], vec![b, k, n]], |g, v| g.bmm(v[0], v[1]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_add_sub_mul(seed in any::<u64>(), m in dim(), n in dim()) {
        let s = vec![vec![m, n], vec![m, n]];
        prop_assert!(check_op(seed, &s, |g, v| g.add(v[0], v[1])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.sub(v[0], v[1])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.mul(v[0], v[1])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.mul(v[0], v[0])) < TOL);
    }

    #[test]
    fn grad_add_bias_scale(seed in any::<u64>(), b in dim(), m in dim(), n in dim()) {
        let e = check_op(seed, &[vec![b, m, n], vec![m, n]], |g, v| {
            let x = g.add_bias(v[0], v[1])?;
            g.scale(x, -0.7)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_concat_slice(seed in any::<u64>(), a in dim(), b in dim(), c in dim(), axis in 0usize..3) {
        let mut s1 = vec![a, b, c];
        let mut s2 = vec![a, b, c];
        s1[axis] += 1;
        s2[axis] += 2;
        let e = check_op(seed, &[s1, s2], move |g, v| {
            let x = g.concat(&[v[0], v[1], v[0]], axis)?;
            let len = g.shape(x)[axis];
            g.slice(x, axis, 1, len - 2)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_reshape_transpose(seed in any::<u64>(), a in dim(), b in dim(), c in dim()) {
        let e = check_op(seed, &[vec![a, b, c]], move |g, v| {
            let t = g.transpose(v[0])?;
            g.reshape(t, &[a * c, b])
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_pointwise(seed in any::<u64>(), m in dim(), n in dim()) {
        let s = vec![vec![m, n]];
        prop_assert!(check_op(seed, &s, |g, v| g.sigmoid(v[0])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.tanh(v[0])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.exp(v[0])) < TOL);
        prop_assert!(check_op(seed, &s, |g, v| g.elu(v[0])) < TOL);
    }

    #[test]
    fn grad_softmax(seed in any::<u64>(), a in dim(), b in 2usize..5, c in dim(), axis in 0usize..3) {
        let e = check_op(seed, &[vec![a, b, c]], move |g, v| g.softmax(v[0], axis));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_layer_norm(seed in any::<u64>(), m in dim(), n in 2usize..7) {
        // near-constant rows make the finite-difference reference itself inaccurate
        let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &[m, n]);
        let min_spread = x
            .data()
            .chunks(n)
            .map(|r| r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - r.iter().fold(f64::INFINITY, |a, &b| a.min(b)))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_spread > 0.3);
        let e = check_op(seed, &[vec![m, n]], |g, v| g.layer_norm(v[0]));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_embedding(seed in any::<u64>(), vocab in 1usize..4, d in dim(), picks in prop::collection::vec(0usize..4, 1..6)) {
        let idx: Vec<usize> = picks.iter().map(|p| p % vocab).collect();
        let e = check_op(seed, &[vec![vocab, d]], move |g, v| g.embedding(v[0], &idx));
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_reductions(seed in any::<u64>(), m in dim(), n in dim()) {
        prop_assert!(check_op(seed, &[vec![m, n]], |g, v| g.mean(v[0])) < TOL);
        prop_assert!(check_op(seed, &[vec![m, n]], |g, v| g.sum(v[0])) < TOL);
    }

    #[test]
    fn grad_dropout_frozen_seed(seed in any::<u64>(), m in dim(), n in dim()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = store.add("x", rand_tensor(&mut rng, &[m, n]));
        let f = |s: &ParamStore| -> Result<(f64, Gradients), AutodiffError> {
            let mut g = Graph::with_dropout(s, ChaCha8Rng::seed_from_u64(seed ^ 1));
            let x = g.param(p);
            let t = g.tanh(x)?;
            let d = g.dropout(t, 0.3)?;
            let l = g.sum(d)?;
            Ok((g.value(l).item(), g.backward(l)?))
        };
        let (_, grads) = f(&store).unwrap();
        let e = grad_check(|s| f(s).map(|r| r.0), &store, &grads, 1e-5).unwrap();
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn grad_pinball(seed in any::<u64>(), n in dim()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = [0.1, 0.5, 0.9];
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e = check_op(seed, &[vec![n, 3]], move |g, v| {
            let l = g.pinball(v[0], &target, &q)?;
            g.scale(l, 1.0)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_sums_to_one(seed in any::<u64>(), a in dim(), b in dim(), axis in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let t: Vec<f64> = (0..a * b).map(|_| rng.random_range(-20.0..20.0)).collect();
        let x = g.input(Tensor::matrix(a, b, t).unwrap()).unwrap();
        let y = g.softmax(x, axis).unwrap();
        let d = g.value(y).data().to_vec();
        if axis == 1 {
            for r in 0..a {
                let s: f64 = d[r * b..(r + 1) * b].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        } else {
            for c in 0..b {
                let s: f64 = (0..a).map(|r| d[r * b + c]).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_moments(seed in any::<u64>(), m in dim(), n in 2usize..16, spread in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let t: Vec<f64> = (0..m * n).map(|_| rng.random_range(-spread..spread) + 5.0).collect();
        let x = g.input(Tensor::matrix(m, n, t).unwrap()).unwrap();
        let y = g.layer_norm(x).unwrap();
        for row in g.value(y).data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }
}

#[test]
fn softmax_uniform() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::vector(vec![0.0; 3])).unwrap();
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn sigmoid_value_and_slope() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::scalar(0.0));
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).item(), 0.5);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(p, &store), vec![0.25]);
}

#[test]
fn dropout_rate_zero_and_eval_are_identity() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::vector(vec![1.0, -2.0, 3.5]));
    let mut g = Graph::with_dropout(&store, ChaCha8Rng::seed_from_u64(3));
    let x = g.param(p);
    let y = g.dropout(x, 0.0).unwrap();
    assert_eq!(g.value(y), store.get(p));
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let y = g.dropout(x, 0.5).unwrap();
    assert_eq!(g.value(y), store.get(p));
    assert!(matches!(g.dropout(x, 1.0), Err(AutodiffError::InvalidArgument(_))));
}

#[test]
fn dropout_inverted_scaling_and_determinism() {
    let store = ParamStore::new();
    let run = |seed| {
        let mut g = Graph::with_dropout(&store, ChaCha8Rng::seed_from_u64(seed));
        let x = g.input(Tensor::full(&[1000], 1.0)).unwrap();
        let y = g.dropout(x, 0.2).unwrap();
        g.value(y).data().to_vec()
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_ne!(a, run(12));
    assert!(a.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    let kept = a.iter().filter(|&&v| v > 0.0).count();
    assert!((700..900).contains(&kept));
}

#[test]
fn sum_of_squares_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::vector(vec![1.0, 2.0]));
    let q = store.add("unused", Tensor::vector(vec![5.0]));
    let mut g = Graph::new(&store);
    let x = g.param(p);
    let _ = g.param(q);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(p, &store), vec![2.0, 4.0]);
    assert_eq!(grads.get(q, &store), vec![0.0]);
    assert_eq!(g.backward(loss).unwrap().get(p, &store), vec![2.0, 4.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut store = ParamStore::new();
    let p = store.add("x", Tensor::vector(vec![1.0, 2.0]));
    let mut g = Graph::new(&store);
    let x = g.param(p);
    assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss(_))));
}

#[test]
fn shape_and_finiteness_errors() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(AutodiffError::ShapeMismatch(_))));
    let c = g.input(Tensor::full(&[2], 1e300)).unwrap();
    assert!(matches!(g.mul(c, c), Err(AutodiffError::NonFiniteValue(_))));
    assert!(g.input(Tensor::scalar(f64::NAN)).is_err());
}

#[test]
fn quadratic_grad_check_exact() {
    let mut store = ParamStore::new();
    let p = store.add("w", Tensor::vector(vec![0.3, -1.2, 2.0, 0.01]));
    let f = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let w = g.param(p);
        let sq = g.mul(w, w)?;
        let l = g.sum(sq)?;
        Ok::<_, AutodiffError>((g.value(l).item(), g.backward(l)?))
    };
    let (_, grads) = f(&store).unwrap();
    assert!(grad_check(|s| f(s).map(|r| r.0), &store, &grads, 1e-5).unwrap() < 1e-9);
}

#[test]
fn mlp_three_layer_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let dims = [5, 7, 6, 1];
    let mut layers = Vec::new();
    for i in 0..3 {
        let w = store.add_glorot(format!("w{i}"), dims[i], dims[i + 1], &mut rng);
        let b = store.add(format!("b{i}"), rand_tensor(&mut rng, &[dims[i + 1]]));
        layers.push((w, b));
    }
    let x = rand_tensor(&mut rng, &[4, 5]);
    let f = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let mut h = g.input(x.clone())?;
        for (i, (w, b)) in layers.iter().enumerate() {
            let (w, b) = (g.param(*w), g.param(*b));
            let z = g.matmul(h, w)?;
            h = g.add_bias(z, b)?;
            if i < 2 {
                h = g.elu(h)?;
            }
        }
        let l = g.mean(h)?;
        Ok::<_, AutodiffError>((g.value(l).item(), g.backward(l)?))
    };
    let (_, grads) = f(&store).unwrap();
    assert!(grad_check(|s| f(s).map(|r| r.0), &store, &grads, 1e-5).unwrap() < 1e-6);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut store = ParamStore::new();
    let p = store.add("w", Tensor::vector(vec![3.0, -2.0]));
    let mut opt = Adam::new(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() }, &store);
    for _ in 0..2000 {
        let grads = {
            let mut g = Graph::new(&store);
            let w = g.param(p);
            let sq = g.mul(w, w).unwrap();
            let l = g.sum(sq).unwrap();
            g.backward(l).unwrap()
        };
        opt.step(&mut store, &grads);
    }
    assert!(store.get(p).data().iter().all(|v| v.abs() < 1e-2));
}

#[test]
fn clipping_bounds_norm() {
    let mut grads = Gradients { grads: vec![Some(vec![3.0, 4.0]), None] };
    let before = clip_global_norm(&mut grads, 1.0);
    assert_eq!(before, 5.0);
    assert!((grads.global_norm() - 1.0).abs() < 1e-12);
}
