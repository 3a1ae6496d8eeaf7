use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mikani_bench::{regression_set, rng};
use mikani_core::features::FEATURE_DIM;
use mikani_core::svr::{svr_predict, svr_train, SvrConfig};

fn svr(c: &mut Criterion) {
    let cfg = SvrConfig::default();
    let mut group = c.benchmark_group("svr_train");
    group.sample_size(10);
    for n in [100, 400] {
        let (rows, targets) = regression_set(&mut rng(n as u64), n, FEATURE_DIM);
        group.bench_with_input(BenchmarkId::from_parameter(n), &(rows, targets), |b, (rows, targets)| {
            b.iter(|| svr_train(black_box(rows), black_box(targets), &cfg).unwrap())
        });
    }
    group.finish();

    let (rows, targets) = regression_set(&mut rng(9), 400, FEATURE_DIM);
    let model = svr_train(&rows, &targets, &cfg).unwrap();
    let (queries, _) = regression_set(&mut rng(10), 1000, FEATURE_DIM);
    c.bench_function("svr_predict_1000", |b| b.iter(|| svr_predict(&model, black_box(&queries)).unwrap()));
}

criterion_group!(benches, svr);
criterion_main!(benches);
