//! Fixtures shared by the benchmarks.

use carleman_core::builders;
use carleman_core::carleman::{euclidean_weight, WeightFamily, WeightSpec};
use carleman_core::geometry::{Chart, ChartMetric};
use carleman_core::transport::SimpleManifold;
use carleman_core::{Expr, ScalarField};

/// `e^{0.2 x₁} δ + 0.3 v vᵀ` with `v = (sin x₂, cos x₃, sin(x₁ + x₂))`.
pub fn curved_metric3() -> ChartMetric {
    let x = Expr::coords(3);
    let v = [x[1].sin(), x[2].cos(), (x[0].clone() + x[1].clone()).sin()];
    let s = (0.2 * x[0].clone()).exp();
    let comps = (0..3)
        .map(|j| (0..3).map(|k| if j == k { s.clone() } else { Expr::zero() } + 0.3 * v[j].clone() * v[k].clone()).collect())
        .collect();
    ChartMetric::new(Chart::cube(3, 2.0), comps).expect("positive definite")
}

pub fn log_weight3() -> ScalarField {
    let spec = WeightSpec { family: WeightFamily::Log, a: 1.0, b: 0.0, x0: vec![0.1, -0.2, 0.05], xi: None, omega1: None, omega2: None, theta: None };
    euclidean_weight(&spec).expect("valid weight").field
}

pub fn cap() -> SimpleManifold {
    builders::sphere_cap(0.6)
}
