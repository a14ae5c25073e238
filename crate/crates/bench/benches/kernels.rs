use carleman_bench::{cap, curved_metric3, log_weight3};
use carleman_core::boundary::{self, BoundaryCoefficients, SymbolFunction};
use carleman_core::carleman::{bracket_value, lcw_report, BracketMethod, CotangentSample};
use carleman_core::geometry::{curvature, grad_hessian};
use carleman_core::rng::seeded;
use carleman_core::transport::{build_fan, integrate_geodesic, GRAZING_GUARD};
use carleman_core::xray::{build_system, forward, pestov_terms, JetMode, NodalGrid, SphereBundleFunction, Unknowns};
use carleman_core::{ScalarField, Tolerance};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn geometry(c: &mut Criterion) {
    let g = curved_metric3();
    let phi = log_weight3();
    let x = [0.4, 0.3, -0.2];
    c.bench_function("grad_hessian/curved3", |b| b.iter(|| grad_hessian(&g, &phi, black_box(&x)).unwrap()));
    c.bench_function("curvature/curved3", |b| b.iter(|| curvature(&g, black_box(&x)).unwrap()));
}

fn brackets(c: &mut Criterion) {
    let g = curved_metric3();
    let phi = log_weight3();
    let s = CotangentSample { x: vec![0.4, 0.3, -0.2], xi: vec![0.3, -1.0, 0.5] };
    c.bench_function("bracket/formula", |b| b.iter(|| bracket_value(&g, &phi, black_box(&s), BracketMethod::Formula).unwrap()));
    c.bench_function("bracket/direct", |b| b.iter(|| bracket_value(&g, &phi, black_box(&s), BracketMethod::Direct).unwrap()));
    let pts: Vec<Vec<f64>> = (0..10).map(|k| vec![0.5 + 0.1 * k as f64, 0.2, -0.3]).collect();
    c.bench_function("lcw_report/10x16", |b| b.iter(|| lcw_report(&g, &phi, &pts, 16, &Tolerance::default()).unwrap()));
}

fn transport(c: &mut Criterion) {
    let m = cap();
    let v = m.unit(&[0.6, 0.0], &[-1.0, 0.3]).unwrap();
    c.bench_function("geodesic/cap", |b| b.iter(|| integrate_geodesic(&m, black_box(&[0.6, 0.0]), &v, None).unwrap()));
    let mut group = c.benchmark_group("xray");
    group.sample_size(10);
    let fan = build_fan(&m, 16, 16, GRAZING_GUARD, None).unwrap();
    let a = ScalarField::constant(2, 0.3);
    let f = ScalarField::constant(2, 1.0);
    group.bench_function("fan/16x16", |b| b.iter(|| build_fan(&m, 16, 16, GRAZING_GUARD, None).unwrap()));
    group.bench_function("forward/16x16", |b| b.iter(|| forward(&m, &a, &f, None, &fan).unwrap()));
    let grid = NodalGrid::covering(&m, 12, 12).unwrap();
    group.bench_function("system/12x12", |b| b.iter(|| build_system::<f64>(&m, &a, &fan, &grid, Unknowns::Function).unwrap()));
    group.finish();
    let u = SphereBundleFunction::random(&mut seeded(1), true);
    c.bench_function("pestov/exact", |b| b.iter(|| pestov_terms(&m.metric, &u, black_box(&[0.1, 0.2]), 0.7, JetMode::Exact).unwrap()));
}

fn boundary_recovery(c: &mut Criterion) {
    let bc = BoundaryCoefficients::random_normalized(&mut seeded(3), 3).unwrap();
    let xp = [0.1, -0.2];
    let s: Vec<SymbolFunction> = [1, 0, -1].iter().map(|&l| boundary::symbol_b(&bc, l).unwrap()).collect();
    let mut group = c.benchmark_group("boundary");
    group.sample_size(10);
    group.bench_function("recover/n3", |b| b.iter(|| boundary::recover(&s[0], &s[1], &s[2], 3, black_box(&xp)).unwrap()));
    group.finish();
}

criterion_group!(benches, geometry, brackets, transport, boundary_recovery);
criterion_main!(benches);
