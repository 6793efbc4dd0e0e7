use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metaspline::multilevel::solve_multilevel;
use metaspline::optimize::ipalm_solve;
use metaspline::SplineState;
use metaspline_bench::{config, gaussian_keyframes};

fn sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("ipalm");
    group.sample_size(10);
    for size in [16usize, 32] {
        let keys = gaussian_keyframes(size, 8);
        let state = SplineState::initialize(&keys, 8).unwrap();
        let cfg = config(8, 1, 5);
        group.bench_with_input(BenchmarkId::new("five_sweeps", size), &state, |b, s| {
            b.iter(|| ipalm_solve(black_box(s.clone()), &cfg).unwrap())
        });
    }
    group.finish();
}

fn multilevel(c: &mut Criterion) {
    let mut group = c.benchmark_group("multilevel");
    group.sample_size(10);
    let keys = gaussian_keyframes(32, 8);
    let cfg = config(8, 3, 10);
    group.bench_function("gaussian_32_three_levels", |b| b.iter(|| solve_multilevel(black_box(&keys), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, sweeps, multilevel);
criterion_main!(benches);
