use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_grad, relative_error, Tensor};
use crate::error::Error;
use crate::taskgen::{Dataset, DatasetKind};

fn binary_ds(x: Vec<f64>, dim: usize, labels: Vec<usize>) -> Dataset {
    let n = labels.len();
    Dataset::new("t", DatasetKind::BinaryTask, Tensor::new(vec![n, dim], x).unwrap(), labels).unwrap()
}

/// Output side length of an unpadded window sweep.
fn side(size: usize, k: usize, s: usize, p: usize) -> usize {
    (size + 2 * p - k) / s + 1
}

#[test]
fn task_convnet_parameter_count() {
    let spec = ArchSpec::task_convnet();
    // 128 -conv3/3-> 42 -pool-> 21 -conv3/3-> 7 -pool-> 3
    let s1 = side(128, 3, 3, 0);
    let p1 = side(s1, 2, 2, 0);
    let s2 = side(p1, 3, 3, 0);
    let p2 = side(s2, 2, 2, 0);
    assert_eq!((s1, p1, s2, p2), (42, 21, 7, 3));
    let flat = 50 * p2 * p2;
    let expect = (3 * 9 * 20 + 20) + (20 * 9 * 50 + 50) + (flat * 500 + 500) + (500 + 1);
    assert_eq!(spec.param_count(), expect);
    assert_eq!(spec.param_count(), 235_611);
}

#[test]
fn domain_convnet_parameter_count() {
    let spec = ArchSpec::domain_convnet(10);
    let s1 = side(32, 5, 1, 0);
    let p1 = side(s1, 2, 2, 0);
    let s2 = side(p1, 5, 1, 2);
    let p2 = side(s2, 2, 2, 0);
    assert_eq!(50 * p2 * p2, 2450);
    let expect = (3 * 25 * 20 + 20) + (20 * 25 * 50 + 50) + (2450 * 500 + 500) + (500 * 10 + 10);
    assert_eq!(spec.param_count(), expect);
    assert_eq!(spec.param_count(), 1_257_080);
}

#[test]
fn mlp_parameter_count() {
    let spec = ArchSpec::mlp(2, &[8], LossKind::Binary, 1);
    assert_eq!(spec.param_count(), 33);
    let p = build(&spec, 0).unwrap();
    assert_eq!(p.len(), 33);
}

#[test]
fn build_is_deterministic_and_bounded() {
    let spec = ArchSpec::mlp(4, &[6, 5], LossKind::Binary, 1);
    let a = build(&spec, 7).unwrap();
    let b = build(&spec, 7).unwrap();
    assert_eq!(a, b);
    let c = build_for_task(&spec, 7, 1).unwrap();
    assert_ne!(a.flat, c.flat);
    assert_eq!(c.init_seed, 8);
    for view in a.views(&spec).unwrap() {
        let fan_in = match spec.layers[view.layer] {
            Layer::Linear { inputs, .. } => inputs,
            _ => unreachable!(),
        };
        let bound = (1.0 / fan_in as f64).sqrt();
        assert!(view.weight.iter().chain(view.bias).all(|v| v.abs() <= bound));
    }
}

#[test]
fn incompatible_chain_is_spec_error() {
    let mut spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 1);
    spec.layers[2] = Layer::Linear { inputs: 5, outputs: 1 };
    assert!(matches!(build(&spec, 0), Err(Error::Spec(_))));
    let mut spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 2);
    spec.output_dim = 2;
    assert!(matches!(spec.validate(), Err(Error::Spec(_))));
}

#[test]
fn zero_weights_give_zero_logits() {
    let spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 1);
    let mut p = build(&spec, 0).unwrap();
    p.flat.iter_mut().for_each(|v| *v = 0.0);
    let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
    assert_eq!(spec.predict(&p, &x).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn linear_model_logit() {
    let spec = ArchSpec::mlp(2, &[], LossKind::Binary, 1);
    let p = ParamSet {
        task_id: 0,
        init_seed: 0,
        flat: vec![1.0, 1.0, 0.0],
    };
    let x = Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap();
    assert_eq!(spec.predict(&p, &x).unwrap().data(), &[5.0]);
}

#[test]
fn seeded_mlp_matches_hand_rolled_forward() {
    let spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 1);
    let p = build(&spec, 0).unwrap();
    let x = [0.5, -1.0, 2.0];
    let w1 = &p.flat[0..12];
    let b1 = &p.flat[12..16];
    let w2 = &p.flat[16..20];
    let b2 = p.flat[20];
    let mut out = b2;
    for o in 0..4 {
        let mut h = b1[o];
        for i in 0..3 {
            h += w1[o * 3 + i] * x[i];
        }
        out += w2[o] * h.max(0.0);
    }
    let got = spec.predict(&p, &Tensor::new(vec![1, 3], x.to_vec()).unwrap()).unwrap();
    assert!((got.data()[0] - out).abs() < 1e-14);
}

#[test]
fn bce_at_zero_logits_is_ln2() {
    let spec = ArchSpec::mlp(2, &[], LossKind::Binary, 1);
    let p = ParamSet {
        task_id: 0,
        init_seed: 0,
        flat: vec![0.0; 3],
    };
    let ds = binary_ds(vec![1.0, 2.0, -1.0, 0.3, 4.0, 4.0, 0.0, 1.0], 2, vec![0, 1, 0, 1]);
    let l = spec.loss(&p, &ds).unwrap().value;
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn saturated_correct_logits_drive_loss_to_zero() {
    let spec = ArchSpec::mlp(1, &[], LossKind::Binary, 1);
    let p = ParamSet {
        task_id: 0,
        init_seed: 0,
        flat: vec![100.0, 0.0],
    };
    let ds = binary_ds(vec![1.0, -1.0, 2.0, -3.0], 1, vec![1, 0, 1, 0]);
    let l = spec.loss(&p, &ds).unwrap().value;
    assert!((0.0..1e-40).contains(&l), "{l}");
}

#[test]
fn bce_matches_scalar_loop() {
    let spec = ArchSpec::mlp(3, &[5], LossKind::Binary, 1);
    let p = build(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..2)).collect();
    let ds = binary_ds(x.clone(), 3, labels.clone());
    let logits = spec.predict(&p, &ds.inputs).unwrap();
    let mut total = 0.0;
    for (z, &y) in logits.data().iter().zip(&labels) {
        let prob = 1.0 / (1.0 + (-z).exp());
        total += if y == 1 { -prob.ln() } else { -(1.0 - prob).ln() };
    }
    let l = spec.loss(&p, &ds).unwrap().value;
    assert!((l - total / 10.0).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let spec = ArchSpec::mlp(2, &[3], LossKind::Multiclass, 4);
    let p = build(&spec, 1).unwrap();
    let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -1.0, 0.5, 2.0, -0.3]).unwrap();
    let ds = Dataset::new("d", DatasetKind::MulticlassDomain { classes: 4 }, x, vec![0, 3, 2]).unwrap();
    let logits = spec.predict(&p, &ds.inputs).unwrap();
    let mut total = 0.0;
    for (r, &y) in ds.labels.iter().enumerate() {
        let row = logits.row(r);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[y].exp() / z).ln();
    }
    let l = spec.loss(&p, &ds).unwrap().value;
    assert!((l - total / 3.0).abs() < 1e-12);
}

#[test]
fn incompatible_labels_are_rejected() {
    let spec = ArchSpec::mlp(2, &[], LossKind::Multiclass, 3);
    let p = build(&spec, 0).unwrap();
    let ds = binary_ds(vec![0.0, 1.0], 2, vec![1]);
    assert!(matches!(spec.loss(&p, &ds), Err(Error::Precondition(_))));
}

#[test]
fn final_relu_clamps_logits() {
    let mut spec = ArchSpec::mlp(1, &[], LossKind::Binary, 1);
    spec.final_relu = true;
    let p = ParamSet {
        task_id: 0,
        init_seed: 0,
        flat: vec![-1.0, 0.0],
    };
    let x = Tensor::new(vec![2, 1], vec![3.0, -3.0]).unwrap();
    assert_eq!(spec.predict(&p, &x).unwrap().data(), &[0.0, 3.0]);
}

/// Tiny conv stack with an independent direct-convolution oracle.
fn tiny_conv_spec() -> ArchSpec {
    ArchSpec {
        layers: vec![
            Layer::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            Layer::Relu,
            Layer::MaxPool { kernel: 2, stride: 2 },
            Layer::Flatten,
            Layer::Linear { inputs: 3 * 2 * 2, outputs: 1 },
        ],
        input_shape: vec![5, 4, 2],
        output_dim: 1,
        loss: LossKind::Binary,
        final_relu: false,
    }
}

fn conv_oracle(p: &[f64], img: &[f64]) -> f64 {
    let (h, w, c, oc, k) = (5usize, 4usize, 2usize, 3usize, 3usize);
    let wt = &p[0..oc * k * k * c];
    let bias = &p[oc * k * k * c..oc * k * k * c + oc];
    let mut conv = vec![0.0; h * w * oc];
    for y in 0..h {
        for x in 0..w {
            for o in 0..oc {
                let mut acc = bias[o];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - 1;
                        let ix = x as isize + kx as isize - 1;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            acc += wt[((o * k + ky) * k + kx) * c + ch]
                                * img[((iy as usize) * w + ix as usize) * c + ch];
                        }
                    }
                }
                conv[(y * w + x) * oc + o] = acc.max(0.0);
            }
        }
    }
    let mut pooled = Vec::new();
    for py in 0..2 {
        for px in 0..2 {
            for o in 0..oc {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(conv[((2 * py + dy) * w + 2 * px + dx) * oc + o]);
                    }
                }
                pooled.push(m);
            }
        }
    }
    let lw = &p[oc * k * k * c + oc..];
    let mut out = lw[12];
    for (i, v) in pooled.iter().enumerate() {
        out += lw[i] * v;
    }
    out
}

#[test]
fn conv_stack_matches_direct_oracle_and_finite_differences() {
    let spec = tiny_conv_spec();
    let p = build(&spec, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let imgs: Vec<f64> = (0..2 * 40).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Tensor::new(vec![2, 5, 4, 2], imgs.clone()).unwrap();
    let logits = spec.predict(&p, &x).unwrap();
    for s in 0..2 {
        let expect = conv_oracle(&p.flat, &imgs[s * 40..(s + 1) * 40]);
        assert!((logits.data()[s] - expect).abs() < 1e-12);
    }

    let ds = Dataset::new("img", DatasetKind::BinaryTask, x, vec![1, 0]).unwrap();
    let (_, ad) = spec.loss_and_grad(&p, &ds).unwrap();
    let fd = finite_diff_grad(
        |flat| {
            let q = ParamSet { flat: flat.to_vec(), ..p.clone() };
            Ok(spec.loss(&q, &ds)?.value)
        },
        &p.flat,
        1e-6,
    )
    .unwrap();
    let err = relative_error(ad.as_slice(), fd.as_slice(), 1e-12);
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn checkpoint_round_trip_and_truncation() {
    let spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 1);
    let p = build_for_task(&spec, 10, 5).unwrap();
    let mut buf = Vec::new();
    p.write_to(&mut buf).unwrap();
    assert_eq!(buf.len(), 24 + 8 * p.len());
    assert_eq!(&buf[0..8], &5u64.to_le_bytes());
    assert_eq!(&buf[8..16], &(p.len() as u64).to_le_bytes());
    assert_eq!(&buf[16..24], &15u64.to_le_bytes());
    assert_eq!(ParamSet::read_from(buf.as_slice()).unwrap(), p);
    let err = ParamSet::read_from(&buf[..buf.len() - 3]).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
}

#[test]
fn arch_spec_serializes_as_structured_text() {
    let spec = ArchSpec::task_convnet();
    let json = serde_json::to_string(&spec).unwrap();
    assert!(json.contains("\"kind\":\"conv2d\""));
    let back: ArchSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prop_loss_is_non_negative_and_pure(seed in 0u64..1000, n in 1usize..12) {
        let spec = ArchSpec::mlp(3, &[4], LossKind::Binary, 1);
        let p = build(&spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let ds = binary_ds(x, 3, labels);
        let a = spec.loss(&p, &ds).unwrap().value;
        let b = spec.loss(&p, &ds).unwrap().value;
        prop_assert!(a > 0.0);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
