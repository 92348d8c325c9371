use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mrd_bench::design_sample;
use mrd_core::bandwidth::{select, SelectorOptions};
use mrd_core::estimator::estimate_rotated;
use mrd_core::kernels::{moment_matrices, quadrature_moment};
use mrd_core::localpoly;
use mrd_core::{distance_estimate, to_signed_distance, BoundaryFrame, EstimateOptions, KernelFamily, KernelSpec, Side};

fn kernels(c: &mut Criterion) {
    let spec = KernelSpec::new(KernelFamily::ProductTriangular, Side::Plus);
    c.bench_function("moment_matrices/p3", |b| b.iter(|| moment_matrices(black_box(&spec), 3).unwrap()));
    let cone = KernelSpec::new(KernelFamily::Cone, Side::Minus);
    c.bench_function("quadrature_moment/cone", |b| {
        b.iter(|| quadrature_moment(black_box(&cone), (2, 2), 2).unwrap())
    });
}

fn local_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("local_fit");
    for n in [1000usize, 5000, 20000] {
        let data = design_sample(2, n);
        let spec = KernelSpec::new(KernelFamily::ProductTriangular, Side::Plus);
        for p in [1usize, 3] {
            group.bench_with_input(BenchmarkId::new(format!("p{p}"), n), &data, |b, d| {
                b.iter(|| localpoly::fit(d, [15.0, 10.0], p, &spec).unwrap())
            });
        }
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let data = design_sample(2, 5000);
    let options = EstimateOptions::default();
    c.bench_function("select/n5000", |b| {
        b.iter(|| select(black_box(&data), KernelFamily::ProductTriangular, &SelectorOptions::default()).unwrap())
    });
    c.bench_function("estimate/n5000", |b| {
        b.iter(|| estimate_rotated(&data, BoundaryFrame::origin(), KernelFamily::ProductTriangular, &options).unwrap())
    });
    let sample = to_signed_distance(&data, &BoundaryFrame::origin());
    c.bench_function("distance_ik/n5000", |b| b.iter(|| distance_estimate(&sample, None, 0.05).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels, local_fit, estimators
}
criterion_main!(benches);
