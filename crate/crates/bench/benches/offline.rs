//! Offline-stage benchmarks: support evaluation, contraction computation,
//! tightenings, and the full design pipeline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use rigidtube::model::HPolyhedron;
use rigidtube::setcalc::{support_polytope, support_s, ImplicitRpiSet};
use rigidtube::solver::SolverSettings;
use rigidtube::synthesis::{compute_contraction, compute_tightenings, design};

use rigidtube_bench::double_integrator;

fn bench_support(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let mut group = c.benchmark_group("support_polytope");
    for n in [2usize, 10, 30] {
        let w = HPolyhedron::inf_ball(n);
        let dir = DVector::from_fn(n, |i, _| 1.0 - 0.5 * (i as f64 / n as f64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| support_polytope(&w, &dir, &settings).unwrap())
        });
    }
    group.finish();
}

fn bench_support_s(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let s = ImplicitRpiSet::from_certified_parts(
        DMatrix::from_fn(4, 4, |r, q| if r == q { 0.5 } else { 0.05 }),
        DMatrix::zeros(2, 4),
        HPolyhedron::inf_ball(4),
        0.5,
        8,
    )
    .unwrap();
    let eta = DVector::from_fn(4, |i, _| 0.3 + i as f64 * 0.1);
    c.bench_function("support_s_ns8_n4", |b| {
        b.iter(|| support_s(&s, &eta, &settings).unwrap())
    });
}

fn bench_contraction(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let a_k = DMatrix::from_fn(6, 6, |r, q| if r == q { 0.6 } else { -0.04 });
    let w = HPolyhedron::inf_ball(6);
    c.bench_function("compute_contraction_n6_ns5", |b| {
        b.iter(|| compute_contraction(&a_k, &w, 5, &settings).unwrap())
    });
}

fn bench_tightenings(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let spec = double_integrator(10);
    let d = design(&spec).unwrap();
    c.bench_function("compute_tightenings_double_integrator", |b| {
        b.iter(|| compute_tightenings(&d.s, &spec.y, d.s.k_s(), &settings).unwrap())
    });
}

fn bench_full_design(c: &mut Criterion) {
    let spec = double_integrator(10);
    c.bench_function("design_double_integrator", |b| {
        b.iter(|| design(&spec).unwrap())
    });
}

criterion_group!(
    benches,
    bench_support,
    bench_support_s,
    bench_contraction,
    bench_tightenings,
    bench_full_design
);
criterion_main!(benches);
