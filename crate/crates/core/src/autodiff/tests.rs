use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Dense layer sizes -> parameter count.
fn mlp_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// MLP built from graph ops; weights `[out, in]` row-major, then bias.
fn mlp_graph(g: &mut Graph, theta: Var, x: Var, dims: &[usize]) -> Result<Var> {
    let mut h = x;
    let mut off = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (din, dout) = (w[0], w[1]);
        let wv = g.slice(theta, off, &[dout, din])?;
        off += din * dout;
        let bv = g.slice(theta, off, &[dout])?;
        off += dout;
        let wt = g.transpose(wv)?;
        let z = g.matmul(h, wt)?;
        h = g.add_row_bias(z, bv)?;
        if l + 2 < dims.len() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Hand-rolled forward pass, independent of the graph.
fn mlp_oracle(theta: &[f64], x: &[f64], n: usize, dims: &[usize]) -> Vec<f64> {
    let mut h: Vec<f64> = x.to_vec();
    let mut off = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (din, dout) = (w[0], w[1]);
        let wt = &theta[off..off + din * dout];
        off += din * dout;
        let b = &theta[off..off + dout];
        off += dout;
        let mut next = vec![0.0; n * dout];
        for r in 0..n {
            for o in 0..dout {
                let mut acc = b[o];
                for i in 0..din {
                    acc += wt[o * din + i] * h[r * din + i];
                }
                if l + 2 < dims.len() {
                    acc = acc.max(0.0);
                }
                next[r * dout + o] = acc;
            }
        }
        h = next;
    }
    h
}

#[derive(Clone, Copy, Debug)]
enum LossKind {
    Bce,
    Ce,
    Quadratic,
}

struct Fixture {
    dims: Vec<usize>,
    n: usize,
    x: Vec<f64>,
    targets: Vec<f64>,
    labels: Vec<usize>,
    theta: Vec<f64>,
}

fn fixture(seed: u64, dims: &[usize], n: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let din = dims[0];
    let dout = *dims.last().unwrap();
    Fixture {
        dims: dims.to_vec(),
        n,
        x: rand_vec(&mut rng, n * din, 1.0),
        targets: (0..n).map(|_| rng.random_range(0..2) as f64).collect(),
        labels: (0..n).map(|_| rng.random_range(0..dout.max(2))).collect(),
        theta: rand_vec(&mut rng, mlp_count(dims), 0.8),
    }
}

fn loss_graph(g: &mut Graph, theta: Var, f: &Fixture, kind: LossKind) -> Result<Var> {
    let din = f.dims[0];
    let x = g.constant(Tensor::new(vec![f.n, din], f.x.clone())?);
    let out = mlp_graph(g, theta, x, &f.dims)?;
    match kind {
        LossKind::Bce => {
            let z = g.reshape(out, &[f.n])?;
            g.bce_with_logits(z, &f.targets)
        }
        LossKind::Ce => g.cross_entropy(out, &f.labels),
        LossKind::Quadratic => {
            let sq = g.mul(out, out)?;
            let s = g.sum(sq);
            Ok(g.scale(s, 0.5 / f.n as f64))
        }
    }
}

fn loss_value(f: &Fixture, theta: &[f64], kind: LossKind) -> Result<f64> {
    let mut g = Graph::new(false);
    let t = g.constant(Tensor::vector(theta.to_vec()));
    let l = loss_graph(&mut g, t, f, kind)?;
    Ok(g.value(l).item())
}

fn backward_grad(f: &Fixture, kind: LossKind) -> GradVector {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(f.theta.clone()));
    let l = loss_graph(&mut g, t, f, kind).unwrap();
    g.set_output(l);
    g.backward(&Tensor::scalar(1.0)).unwrap()
}

#[test]
fn identity_forward() {
    let mut g = Graph::new(false);
    let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let out = forward(&mut g, &[x.clone()], |_, v| Ok(v[0])).unwrap();
    assert_eq!(g.value(out), &x);
}

#[test]
fn single_linear_node() {
    let mut g = Graph::new(false);
    let w = g.param(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
    let b = g.param(Tensor::vector(vec![0.0]));
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let out = forward(&mut g, &[x], |g, v| {
        let z = g.matmul(v[0], w)?;
        g.add_row_bias(z, b)
    })
    .unwrap();
    assert_eq!(g.value(out).data(), &[6.0]);
}

#[test]
fn mlp_forward_matches_hand_rolled() {
    let dims = [4, 5, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let theta = rand_vec(&mut rng, mlp_count(&dims), 1.0);
    let x = vec![1.0; 2 * 4];
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(theta.clone()));
    let out = forward(&mut g, &[Tensor::new(vec![2, 4], x.clone()).unwrap()], |g, v| {
        mlp_graph(g, t, v[0], &dims)
    })
    .unwrap();
    let expect = mlp_oracle(&theta, &x, 2, &dims);
    for (a, b) in g.value(out).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn forward_shape_error_names_node() {
    let mut g = Graph::new(false);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    match err {
        Error::Shape { node, .. } => assert!(node.contains("matmul"), "{node}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn half_square_gradient() {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(vec![1.0]));
    let sq = g.mul(t, t).unwrap();
    let l = g.scale(sq, 0.5);
    g.set_output(l);
    let grad = g.backward(&Tensor::scalar(1.0)).unwrap();
    assert_eq!(grad.as_slice(), &[1.0]);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(vec![1.0, -2.0]));
    let c = g.constant(Tensor::scalar(3.5));
    g.set_output(c);
    let grad = g.backward(&Tensor::scalar(1.0)).unwrap();
    assert_eq!(grad.as_slice(), &[0.0, 0.0]);
    let _ = t;
}

#[test]
fn backward_before_forward_is_state_error() {
    let mut g = Graph::new(false);
    g.param(Tensor::scalar(1.0));
    assert!(matches!(
        g.backward(&Tensor::scalar(1.0)),
        Err(Error::State(_))
    ));
}

#[test]
fn seed_shape_must_match_output() {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(vec![1.0, 2.0]));
    g.set_output(t);
    assert!(matches!(
        g.backward(&Tensor::scalar(1.0)),
        Err(Error::Shape { .. })
    ));
    // seed . output
    let grad = g.backward(&Tensor::vector(vec![3.0, 4.0])).unwrap();
    assert_eq!(grad.as_slice(), &[3.0, 4.0]);
}

#[test]
fn reverse_mode_matches_finite_differences() {
    // 3*6+6 + 6*1+1 = 31 parameters
    for (seed, kind) in [(1, LossKind::Bce), (2, LossKind::Quadratic)] {
        let f = fixture(seed, &[3, 6, 1], 10);
        let ad = backward_grad(&f, kind);
        let fd = finite_diff_grad(|p| loss_value(&f, p, kind), &f.theta, 1e-5).unwrap();
        let err = relative_error(ad.as_slice(), fd.as_slice(), 1e-12);
        assert!(err <= 1e-6, "{kind:?}: rel err {err}");
    }
    let f = fixture(3, &[3, 6, 4], 10);
    let ad = backward_grad(&f, LossKind::Ce);
    let fd = finite_diff_grad(|p| loss_value(&f, p, LossKind::Ce), &f.theta, 1e-5).unwrap();
    let err = relative_error(ad.as_slice(), fd.as_slice(), 1e-12);
    assert!(err <= 1e-6, "ce: rel err {err}");
}

#[test]
fn sigmoid_and_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = rand_vec(&mut rng, 6, 1.5);
    let weights = rand_vec(&mut rng, 6, 1.0);
    let build = |g: &mut Graph, t: Var| -> Result<Var> {
        let s = g.sigmoid(t);
        let m = g.reshape(t, &[2, 3])?;
        let sm = g.softmax(m)?;
        let sm = g.reshape(sm, &[6])?;
        let both = g.mul(s, sm)?;
        let w = g.constant(Tensor::vector(weights.clone()));
        g.dot(both, w)
    };
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(theta.clone()));
    let l = build(&mut g, t).unwrap();
    let d = g.grad(l, &[t]).unwrap()[0];
    let ad = g.value(d).data().to_vec();
    let fd = finite_diff_grad(
        |p| {
            let mut g = Graph::new(false);
            let t = g.constant(Tensor::vector(p.to_vec()));
            let l = build(&mut g, t)?;
            Ok(g.value(l).item())
        },
        &theta,
        1e-5,
    )
    .unwrap();
    assert!(relative_error(&ad, fd.as_slice(), 1e-12) < 1e-8);
}

#[test]
fn gather_scatter_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_vec(&mut rng, 5, 1.0);
    let y = rand_vec(&mut rng, 7, 1.0);
    let map: Rc<[u32]> = vec![0, 2, NO_INDEX, 4, 2, 1, 0].into();
    let mut g = Graph::new(false);
    let xv = g.constant(Tensor::vector(x.clone()));
    let yv = g.constant(Tensor::vector(y.clone()));
    let gx = g.gather(xv, map.clone(), &[7]).unwrap();
    let sy = g.scatter_add(yv, map, &[5]).unwrap();
    let lhs = dot(g.value(gx).data(), &y);
    let rhs = dot(&x, g.value(sy).data());
    assert!((lhs - rhs).abs() < 1e-14);
}

#[test]
fn exact_meta_gradient_on_quadratic() {
    let half_sq = |g: &mut Graph, t: Var| -> Result<Var> {
        let sq = g.mul(t, t)?;
        let s = g.sum(sq);
        Ok(g.scale(s, 0.5))
    };
    let mut g = Graph::new(true);
    let grad = grad_through_update(&mut g, &[1.0], 0.1, GradOrder::Exact, half_sq, half_sq).unwrap();
    assert!((grad.as_slice()[0] - 0.81).abs() < 1e-15);

    // first order drops the (1 - alpha) factor
    let mut g = Graph::new(true);
    let fo = grad_through_update(&mut g, &[1.0], 0.1, GradOrder::FirstOrder, half_sq, half_sq)
        .unwrap();
    assert!((fo.as_slice()[0] - 0.9).abs() < 1e-15);

    // alpha = 0 gives the plain outer gradient at theta
    let mut g = Graph::new(true);
    let z = grad_through_update(&mut g, &[1.0], 0.0, GradOrder::Exact, half_sq, half_sq).unwrap();
    assert_eq!(z.as_slice(), &[1.0]);
}

#[test]
fn exact_mode_needs_higher_order_graph() {
    let f = |g: &mut Graph, t: Var| -> Result<Var> { Ok(g.sum(t)) };
    let mut g = Graph::new(false);
    let err = grad_through_update(&mut g, &[1.0], 0.1, GradOrder::Exact, f, f).unwrap_err();
    assert!(matches!(err, Error::Capability(_)));
    let mut g = Graph::new(false);
    assert!(grad_through_update(&mut g, &[1.0], 0.1, GradOrder::FirstOrder, f, f).is_ok());
}

#[test]
fn meta_gradient_matches_composite_finite_differences() {
    // 4*7+7 + 7*1+1 = 43 params on the inner task, outer task shares the shape
    let inner_f = fixture(11, &[4, 7, 1], 12);
    let mut outer_f = fixture(12, &[4, 7, 1], 12);
    outer_f.theta = inner_f.theta.clone();
    let alpha = 0.3;
    let mut g = Graph::new(true);
    let ad = grad_through_update(
        &mut g,
        &inner_f.theta,
        alpha,
        GradOrder::Exact,
        |g, t| loss_graph(g, t, &inner_f, LossKind::Bce),
        |g, t| loss_graph(g, t, &outer_f, LossKind::Bce),
    )
    .unwrap();
    let composite = |p: &[f64]| -> Result<f64> {
        let mut g = Graph::new(false);
        let t = g.param(Tensor::vector(p.to_vec()));
        let l = loss_graph(&mut g, t, &inner_f, LossKind::Bce)?;
        let d = g.grad(l, &[t])?[0];
        let gl = g.value(d).data().to_vec();
        let hat: Vec<f64> = p.iter().zip(&gl).map(|(a, b)| a - alpha * b).collect();
        loss_value(&outer_f, &hat, LossKind::Bce)
    };
    let fd = finite_diff_grad(composite, &inner_f.theta, 1e-5).unwrap();
    let err = relative_error(ad.as_slice(), fd.as_slice(), 1e-12);
    assert!(err <= 1e-4, "rel err {err}");
}

#[test]
fn first_order_gap_shrinks_linearly_in_alpha() {
    let inner = |g: &mut Graph, t: Var| -> Result<Var> {
        let sq = g.mul(t, t)?;
        let s = g.sum(sq);
        Ok(g.scale(s, 0.5))
    };
    let outer = |g: &mut Graph, t: Var| -> Result<Var> {
        let c = g.constant(Tensor::vector(vec![2.0]));
        let d = g.sub(t, c)?;
        let sq = g.mul(d, d)?;
        let s = g.sum(sq);
        Ok(g.scale(s, 0.5))
    };
    let gap = |alpha: f64| {
        let mut g = Graph::new(true);
        let e = grad_through_update(&mut g, &[1.0], alpha, GradOrder::Exact, inner, outer).unwrap();
        let mut g = Graph::new(true);
        let f =
            grad_through_update(&mut g, &[1.0], alpha, GradOrder::FirstOrder, inner, outer).unwrap();
        (e.as_slice()[0] - f.as_slice()[0]).abs()
    };
    let mut alpha = 0.2;
    for _ in 0..4 {
        let ratio = gap(alpha) / gap(alpha / 2.0);
        assert!(ratio >= 2.0 / 1.5, "alpha {alpha}: ratio {ratio}");
        alpha /= 2.0;
    }
}

#[test]
fn finite_diff_examples() {
    let g = finite_diff_grad(|p| Ok(p[0] * p[0]), &[3.0], 1e-5).unwrap();
    assert!((g.as_slice()[0] - 6.0).abs() <= 1e-6);
    let g = finite_diff_grad(|_| Ok(4.2), &[1.0, 2.0, 3.0], 1e-5).unwrap();
    assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    assert!(matches!(
        finite_diff_grad(|p| Ok(p[0]), &[1.0], 0.0),
        Err(Error::Precondition(_))
    ));
    assert!(matches!(
        finite_diff_grad(|p| Ok(if p[0] > 1.0 { f64::NAN } else { p[0] }), &[1.0], 1e-5),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let f = fixture(21, &[3, 8, 1], 16);
    let a = backward_grad(&f, LossKind::Bce);
    let b = backward_grad(&f, LossKind::Bce);
    let bits = |g: &GradVector| g.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn f32_precision_rounds_values() {
    let mut g = Graph::new(false).with_precision(Precision::F32);
    let t = g.param(Tensor::vector(vec![0.1]));
    let v = g.value(t).item();
    assert_eq!(v, 0.1f32 as f64);
    let sq = g.mul(t, t).unwrap();
    let r = g.value(sq).item();
    assert_eq!(r, r as f32 as f64);
}

#[test]
fn detached_gradients_on_first_order_graph() {
    let mut g = Graph::new(false);
    let t = g.param(Tensor::vector(vec![2.0]));
    let sq = g.mul(t, t).unwrap();
    let l = g.sum(sq);
    let d = g.grad(l, &[t]).unwrap()[0];
    assert!(!g.requires_grad(d));
    let mut g = Graph::new(true);
    let t = g.param(Tensor::vector(vec![2.0]));
    let sq = g.mul(t, t).unwrap();
    let l = g.sum(sq);
    let d = g.grad(l, &[t]).unwrap()[0];
    assert!(g.requires_grad(d));
    // d/dt (2t) = 2
    let dd = g.sum(d);
    let h = g.grad(dd, &[t]).unwrap()[0];
    assert_eq!(g.value(h).data(), &[2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prop_gradients_match_finite_differences(seed in 0u64..10_000, hidden in 2usize..8, kind in 0u8..3) {
        let kind = [LossKind::Bce, LossKind::Ce, LossKind::Quadratic][kind as usize];
        let dout = if matches!(kind, LossKind::Ce) { 3 } else { 1 };
        let f = fixture(seed, &[3, hidden, dout], 8);
        let ad = backward_grad(&f, kind);
        let fd = finite_diff_grad(|p| loss_value(&f, p, kind), &f.theta, 1e-5).unwrap();
        let err = relative_error(ad.as_slice(), fd.as_slice(), 1e-8);
        prop_assert!(err <= 1e-6, "rel err {}", err);
    }
}
