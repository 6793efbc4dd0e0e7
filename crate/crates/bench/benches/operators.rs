use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metaspline::diffops::{jacobian, sobel_gradient};
use metaspline::energy::total_energy;
use metaspline::optimize::{prox_deformation, LinearizationPoint};
use metaspline::warp::{prefilter, warp, warp_adjoint};
use metaspline_bench::{config, gaussian_state, swirl};

fn operators(c: &mut Criterion) {
    let mut group = c.benchmark_group("operators");
    for size in [32usize, 64, 128] {
        let state = gaussian_state(size, 8);
        let u = state.image(0).clone();
        let phi = swirl(size, 0.03);
        group.bench_with_input(BenchmarkId::new("prefilter", size), &u, |b, u| b.iter(|| prefilter(black_box(u))));
        group.bench_with_input(BenchmarkId::new("warp", size), &u, |b, u| b.iter(|| warp(black_box(u), &phi).unwrap()));
        group.bench_with_input(BenchmarkId::new("warp_adjoint", size), &u, |b, u| {
            b.iter(|| warp_adjoint(black_box(u), &phi).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("jacobian", size), &phi, |b, phi| {
            b.iter(|| jacobian(black_box(phi.grid())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sobel", size), &u, |b, u| b.iter(|| sobel_gradient(black_box(u))));
    }
    group.finish();
}

fn energy(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy");
    for size in [32usize, 64] {
        let state = gaussian_state(size, 8);
        let cfg = config(8, 1, 1);
        group.bench_with_input(BenchmarkId::new("total_energy", size), &state, |b, s| {
            b.iter(|| total_energy(black_box(s), &cfg).unwrap())
        });
        let lin = LinearizationPoint::new(3, &state, &cfg, state.deformation(3).clone()).unwrap();
        group.bench_with_input(BenchmarkId::new("prox_deformation", size), &state, |b, s| {
            b.iter(|| prox_deformation(black_box(s.deformation(3)), 10.0, &lin).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, operators, energy);
criterion_main!(benches);
