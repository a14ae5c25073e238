mod common;

use carleman_core::carleman::*;
use carleman_core::geometry::{grad_hessian, tensor_norm_02, Chart, ChartMetric};
use carleman_core::rng::{in_ball, on_sphere, seeded};
use carleman_core::{Expr, ScalarField, Tolerance};
use common::*;
use nalgebra::DVector;

fn e(n: usize) -> ChartMetric {
    ChartMetric::euclidean(Chart::cube(n, 3.0))
}

#[test]
fn symbol_scales_inversely_under_conformal_change() {
    let mut rng = seeded(1);
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let c = random_factor(&mut rng, 3);
    let cg = g.conformal(&c);
    let phi = random_function(&mut rng, 3);
    for _ in 0..10 {
        let x = in_ball(&mut rng, &[0.0; 3], 1.0);
        let s = CotangentSample { x: x.clone(), xi: on_sphere(&mut rng, 3) };
        let p = symbol_p(&g, &phi, &s).unwrap();
        let pc = symbol_p(&cg, &phi, &s).unwrap();
        assert!((pc - p / c.at(&x)).norm() <= 1e-10 * p.norm().max(1.0));
    }
}

#[test]
fn symbol_rejects_complex_weight() {
    let phi = ScalarField::complex(3, carleman_core::CExpr::i());
    let s = CotangentSample { x: vec![0.0; 3], xi: vec![1.0, 0.0, 0.0] };
    assert!(symbol_p(&e(3), &phi, &s).is_err());
}

#[test]
fn bracket_examples() {
    let x = Expr::coords(3);
    let lin = ScalarField::real(3, x[0].clone() * 0.3 - x[1].clone() + 2.0 * x[2].clone());
    let s = CotangentSample { x: vec![0.4, -0.1, 0.2], xi: vec![0.3, 1.2, -0.7] };
    for m in [BracketMethod::Formula, BracketMethod::Direct] {
        assert!(bracket(&e(3), &lin, &s, m).unwrap().abs() < 1e-13);
    }
    let log = ScalarField::real(3, Expr::dot(&x, &x).ln() * 0.5);
    let s = CotangentSample { x: vec![1.0, 0.0, 0.0], xi: vec![0.0, 1.0, 0.0] };
    assert!(bracket(&e(3), &log, &s, BracketMethod::Formula).unwrap().abs() < 1e-14);
    let rep = grad_hessian(&e(3), &log, &s.x).unwrap();
    assert!((4.0 * rep.hessian[(1, 1)] - 4.0).abs() < 1e-14);
    assert!((4.0 * rep.hessian[(0, 0)] + 4.0).abs() < 1e-14);
}

#[test]
fn formula_matches_direct_off_the_characteristic_set() {
    let x = Expr::coords(3);
    let phi = ScalarField::real(3, x[0].clone() + x[1].sq());
    let mut rng = seeded(2);
    for _ in 0..50 {
        let s = CotangentSample { x: in_ball(&mut rng, &[0.0; 3], 2.0), xi: in_ball(&mut rng, &[0.0; 3], 3.0) };
        let f = bracket_value(&e(3), &phi, &s, BracketMethod::Formula).unwrap();
        let d = bracket_value(&e(3), &phi, &s, BracketMethod::Direct).unwrap();
        assert!((f.value - d.value).abs() <= 1e-6 * f.scale.max(d.scale).max(1.0));
    }
}

#[test]
fn vanishing_differential_is_an_error() {
    let x = Expr::coords(3);
    let phi = ScalarField::real(3, Expr::dot(&x, &x));
    let s = CotangentSample { x: vec![0.0; 3], xi: vec![1.0, 0.0, 0.0] };
    assert!(bracket(&e(3), &phi, &s, BracketMethod::Formula).is_err());
    assert!(characteristic_samples(&e(3), &phi, &[0.0; 3], 4).is_err());
}

#[test]
fn characteristic_samples_lie_on_the_characteristic_set() {
    let x = Expr::coords(3);
    let phi = ScalarField::real(3, x[0].clone());
    let s = characteristic_samples(&e(3), &phi, &[0.0; 3], 4).unwrap();
    assert_eq!(s.len(), 4);
    for c in &s {
        assert_eq!(c.xi[0], 0.0);
        assert!((c.xi[1].hypot(c.xi[2]) - 1.0).abs() < 1e-12);
    }
    let mut rng = seeded(3);
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let phi = random_function(&mut rng, 3);
    for c in characteristic_samples(&g, &phi, &[0.2, 0.3, -0.1], 16).unwrap() {
        let p = symbol_p(&g, &phi, &c).unwrap();
        let gi = g.inverse(&c.x).unwrap();
        let xi = DVector::from_vec(c.xi.clone());
        assert!(p.norm() <= 1e-9 * xi.dot(&(&gi * &xi)).max(1.0), "{p}");
    }
    assert!(characteristic_samples(&g, &phi, &[0.2, 0.3, -0.1], 0).is_err());
}

#[test]
fn lcw_report_examples() {
    let tol = Tolerance::default();
    let spec = WeightSpec {
        family: WeightFamily::Log,
        a: 1.0,
        b: 0.0,
        x0: vec![0.0; 3],
        xi: None,
        omega1: None,
        omega2: None,
        theta: None,
    };
    let w = euclidean_weight(&spec).unwrap();
    let pts = vec![vec![1.0, 0.2, 0.0], vec![-0.5, 0.5, 0.5], vec![0.1, -1.3, 0.8]];
    assert!(lcw_report(&e(3), &w.field, &pts, 16, &tol).unwrap().is_lcw);
    let x = Expr::coords(2);
    let harm = ScalarField::real(2, x[0].sq() - x[1].sq());
    let mut rng = seeded(4);
    let g2 = e(2).conformal(&random_factor(&mut rng, 2));
    let pts2 = vec![vec![0.5, 0.3], vec![-0.4, 1.0]];
    assert!(lcw_report(&g2, &harm, &pts2, 4, &tol).unwrap().is_lcw);
    let x = Expr::coords(3);
    let bad = ScalarField::real(3, x[0].clone() + x[1].sq());
    let r = lcw_report(&e(3), &bad, &[vec![0.0, 1.0, 0.0]], 16, &tol).unwrap();
    assert!(!r.is_lcw && r.max_bracket > 0.1);
    // Oracle: 8ξ₂² + 32 over |dφ|⁴ = 25 on the circle |ξ|² = 5, ξ ⊥ (1, 2, 0).
    assert!(r.max_bracket >= 32.0 / 25.0 - 1e-12);
    assert!(lcw_report(&e(3), &bad, &[], 16, &tol).is_err());
}

#[test]
fn catalog_members_are_lcw_and_conformally_invariant() {
    let mut rng = seeded(5);
    let tol = Tolerance::default();
    for family in WeightFamily::ALL {
        for _ in 0..3 {
            let spec = random_spec(&mut rng, family, 3);
            let w = euclidean_weight(&spec).unwrap();
            let pts = safe_points(&mut rng, &spec, 10, 2.0);
            let r = lcw_report(&e(3), &w.field, &pts, 16, &tol).unwrap();
            assert!(r.is_lcw && r.max_bracket <= 1e-6, "{family:?} {}", r.max_bracket);
            let c = random_factor(&mut rng, 3);
            let rc = lcw_report(&e(3).conformal(&c), &w.field, &pts, 16, &tol).unwrap();
            assert!(rc.is_lcw, "{family:?} conformal {}", rc.max_bracket);
        }
    }
}

#[test]
fn rescaled_catalog_weights_have_vanishing_hessian() {
    let mut rng = seeded(6);
    for family in WeightFamily::ALL {
        let spec = random_spec(&mut rng, family, 3);
        let w = euclidean_weight(&spec).unwrap();
        let f = w.field.real_part().unwrap();
        let grad2 = Expr::sum((0..3).map(|i| f.diff(i).sq()));
        let gt = e(3).conformal(&grad2);
        for x in safe_points(&mut rng, &spec, 5, 2.0) {
            let rep = grad_hessian(&gt, &w.field, &x).unwrap();
            let gi = gt.inverse(&x).unwrap();
            let h = tensor_norm_02(&gi, &rep.hessian);
            // Scale: size of the Euclidean Hessian measured in g̃.
            let s = tensor_norm_02(&gi, &grad_hessian(&e(3), &w.field, &x).unwrap().hessian).max(1.0);
            assert!(h <= 1e-5 * s, "{family:?} at {x:?}: {h} vs {s}");
        }
    }
}

#[test]
fn inversion_maps_linear_to_inverse_linear() {
    let mut rng = seeded(7);
    for _ in 0..10 {
        let xi = in_ball(&mut rng, &[0.0; 3], 1.0);
        let a = rng_range(&mut rng);
        let mk = |family| WeightSpec {
            family,
            a,
            b: 0.25,
            x0: vec![0.0; 3],
            xi: Some(xi.clone()),
            omega1: None,
            omega2: None,
            theta: None,
        };
        let lin = euclidean_weight(&mk(WeightFamily::Linear)).unwrap();
        let inv = euclidean_weight(&mk(WeightFamily::InvLinear)).unwrap();
        let x = in_ball(&mut rng, &[0.0; 3], 2.0);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let fx: Vec<f64> = x.iter().map(|v| v / r2).collect();
        let (p, q) = (lin.eval(&fx).unwrap(), inv.eval(&x).unwrap());
        assert!((p - q).abs() <= 1e-10 * p.abs().max(1.0));
    }
}

fn rng_range<R: rand::Rng>(rng: &mut R) -> f64 {
    rng.random_range(0.5..2.0)
}

#[test]
fn domain_predicate_rejects_excluded_sets() {
    let spec = WeightSpec {
        family: WeightFamily::ArgSphere,
        a: 1.0,
        b: 0.0,
        x0: vec![0.0; 3],
        xi: Some(vec![0.0, 0.0, 1.0]),
        omega1: None,
        omega2: None,
        theta: Some(0.0),
    };
    let w = euclidean_weight(&spec).unwrap();
    // θ = 0 excludes the flat disc ⟨y,ξ⟩ = 0, |y| ≤ |ξ|.
    assert!(w.eval(&[0.5, 0.0, 0.0]).is_err());
    assert!(w.eval(&[1.5, 0.0, 0.0]).is_ok());
    let log = WeightSpec { family: WeightFamily::Log, xi: None, theta: None, ..spec.clone() };
    assert!(euclidean_weight(&log).unwrap().eval(&[0.0; 3]).is_err());
    let bad = WeightSpec { theta: Some(7.0), ..spec };
    assert!(euclidean_weight(&bad).is_err());
}

#[test]
fn convexified_bracket_identity() {
    let mut rng = seeded(8);
    let x = Expr::coords(3);
    let phi = ScalarField::real(3, x[0].clone());
    let samples: Vec<CotangentSample> = (0..20)
        .map(|_| CotangentSample { x: in_ball(&mut rng, &[0.0; 3], 1.5), xi: in_ball(&mut rng, &[0.0; 3], 2.0) })
        .collect();
    let tol = Tolerance::default();
    let r = convexified_bracket_check(&e(3), &phi, 1.0, 0.3, &samples, &tol).unwrap();
    assert!(r <= 1e-6 * 10.0, "{r}");
    assert!(convexified_bracket_check(&e(3), &phi, 1.0, 0.0, &samples, &tol).unwrap() <= 1e-12);
    assert!(convexified_bracket_check(&e(3), &phi, 1.0, 1.5, &samples, &tol).is_err());
    // 1 ⊕ g₀ with a curved g₀.
    let mut diag = vec![Expr::one()];
    diag.extend(stereographic(2, 1.0, 1, 3));
    let prod = ChartMetric::diagonal(Chart::cube(3, 3.0), diag).unwrap();
    let s2: Vec<CotangentSample> = (0..20)
        .map(|_| CotangentSample { x: in_ball(&mut rng, &[0.0; 3], 1.0), xi: in_ball(&mut rng, &[0.0; 3], 2.0) })
        .collect();
    let r = convexified_bracket_check(&prod, &phi, 0.5, 0.2, &s2, &tol).unwrap();
    assert!(r <= 1e-5 * 10.0, "{r}");
    let x2 = ScalarField::real(3, x[0].clone() * 2.0);
    assert!(convexified_bracket_check(&e(3), &x2, 1.0, 0.3, &samples, &tol).is_err());
}
