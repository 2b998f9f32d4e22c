use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use structmeta::analysis::{truncated_svd, SimilarityMatrix};
use structmeta::autodiff::GradOrder;
use structmeta::metaengine::{meta_gradient, MetaConfig};
use structmeta::models::{build, ArchSpec, LossKind};
use structmeta::seed;
use structmeta::taskgen::{gen_synthetic_tasks, Dataset, SyntheticConfig};

fn backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad");
    for hidden in [8usize, 64] {
        let arch = ArchSpec::mlp(16, &[hidden], LossKind::Binary, 1);
        let theta = build(&arch, 0).unwrap();
        let db = gen_synthetic_tasks(&SyntheticConfig::new(1, 1, 16, 100, 0.1, 0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| arch.loss_and_grad(black_box(&theta), &db.datasets[0]).unwrap())
        });
    }
    group.finish();
}

fn meta_step(c: &mut Criterion) {
    let arch = ArchSpec::mlp(8, &[16], LossKind::Binary, 1);
    let theta = build(&arch, 1).unwrap().flat;
    let db = gen_synthetic_tasks(&SyntheticConfig::new(13, 3, 8, 50, 0.1, 1)).unwrap();
    let cfg = MetaConfig::default();
    let mut group = c.benchmark_group("meta_gradient");
    for order in [GradOrder::Exact, GradOrder::FirstOrder] {
        for batch in [2usize, 12] {
            let tests: Vec<&Dataset> = db.datasets[1..=batch].iter().collect();
            let weights = vec![1.0 / batch as f64; batch];
            group.bench_function(format!("{order:?}/batch{batch}"), |b| {
                b.iter(|| {
                    meta_gradient(&arch, black_box(&theta), &[&db.datasets[0]], &tests, &weights, cfg.alpha, cfg.beta, order)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("truncated_svd");
    for k in [50usize, 200] {
        let mut rng = seed::rng(k as u64, "bench", 0);
        let s = SimilarityMatrix::from_values(k, (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        group.bench_with_input(BenchmarkId::new("d8", k), &k, |b, _| b.iter(|| truncated_svd(black_box(&s), 8, true).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, backward, meta_step, svd);
criterion_main!(benches);
