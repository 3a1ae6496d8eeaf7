use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mikani_bench::{hard_spans, mask, rng};
use mikani_core::metrics::{iou, spearman_cor};

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("per_answer");
    for len in [200, 2000] {
        let mut r = rng(len as u64);
        let (pred, gold) = (hard_spans(&mut r, len, 6), hard_spans(&mut r, len, 6));
        let (pm, gm) = (mask(&mut r, len), mask(&mut r, len));
        group.bench_with_input(BenchmarkId::new("iou", len), &len, |b, &len| {
            b.iter(|| iou(black_box(&pred), black_box(&gold), len).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("spearman", len), &len, |b, _| {
            b.iter(|| spearman_cor(black_box(&pm), black_box(&gm)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
