#![allow(dead_code)]

use carleman_core::carleman::{WeightFamily, WeightSpec};
use carleman_core::geometry::{Chart, ChartMetric};
use carleman_core::{Expr, ScalarField};
use rand::Rng;

pub fn coeffs<R: Rng>(rng: &mut R, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn lin(c: &[f64], x: &[Expr]) -> Expr {
    Expr::sum(c.iter().zip(x).map(|(a, b)| b.clone() * *a))
}

/// `e^{s} δ + 0.3 v vᵀ` with smooth random `s`, `v`; positive definite everywhere.
pub fn random_metric<R: Rng>(rng: &mut R, chart: Chart) -> ChartMetric {
    let n = chart.lo.len();
    let x = Expr::coords(n);
    let s = lin(&coeffs(rng, n, 0.3), &x) + 0.2 * lin(&coeffs(rng, n, 1.0), &x).sin();
    let v: Vec<Expr> = (0..n)
        .map(|_| (lin(&coeffs(rng, n, 1.0), &x) + rng.random_range(-1.0..1.0)).sin())
        .collect();
    let es = s.exp();
    let comps = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let base = if j == k { es.clone() } else { Expr::zero() };
                    base + 0.3 * v[j].clone() * v[k].clone()
                })
                .collect()
        })
        .collect();
    ChartMetric::new(chart, comps).expect("positive definite by construction")
}

/// Smooth real function with a linear part, so the differential rarely vanishes.
pub fn random_function<R: Rng>(rng: &mut R, n: usize) -> ScalarField {
    let x = Expr::coords(n);
    let a = lin(&coeffs(rng, n, 1.0), &x);
    let b = lin(&coeffs(rng, n, 1.0), &x);
    let e = a.clone() + 0.4 * b.sin() + 0.2 * a.sq() * b;
    ScalarField::real(n, e)
}

/// Positive conformal factor `exp(quadratic)`.
pub fn random_factor<R: Rng>(rng: &mut R, n: usize) -> Expr {
    let x = Expr::coords(n);
    let c = coeffs(rng, n, 0.4);
    let d = coeffs(rng, n, 0.3);
    (lin(&c, &x) + lin(&d, &x).sq()).exp()
}

pub fn stereographic(n: usize, curvature: f64, offset: usize, total: usize) -> Vec<Expr> {
    let x = Expr::coords(total);
    let r2 = Expr::sum((offset..offset + n).map(|i| x[i].sq()));
    let f = 4.0 / (1.0 + curvature * r2).sq();
    vec![f; n]
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `log₂(e[k−1]/e[k])` for the last pair.
pub fn observed_order(e: &[f64]) -> f64 {
    (e[e.len() - 2] / e[e.len() - 1]).log2()
}

/// Random member of a catalog family in `ℝⁿ`.
pub fn random_spec<R: Rng>(rng: &mut R, family: WeightFamily, n: usize) -> WeightSpec {
    WeightSpec::random(rng, family, n)
}

/// `count` points at least 0.1 away from the weight's singular set, from `[-r, r]ⁿ`.
pub fn safe_points<R: Rng>(rng: &mut R, spec: &WeightSpec, count: usize, r: f64) -> Vec<Vec<f64>> {
    spec.regular_points(rng, count, r, 0.1)
}
