mod common;

use carleman_core::geometry::*;
use carleman_core::rng::{in_ball, on_sphere, seeded};
use carleman_core::transport::geodesic_flow;
use carleman_core::{Expr, Real, Tolerance};
use common::*;
use nalgebra::DVector;

fn warped(g0: Vec<Expr>) -> ChartMetric {
    // e^{2x₁}(1 ⊕ g₀), g₀ diagonal in the remaining coordinates.
    let n = g0.len() + 1;
    let e = (Expr::var(0) * 2.0).exp();
    let mut diag = vec![e.clone()];
    diag.extend(g0.into_iter().map(|c| e.clone() * c));
    ChartMetric::diagonal(Chart::cube(n, 1.5), diag).unwrap()
}

#[test]
fn warped_christoffel_symbols() {
    let g = warped(vec![Expr::one(), Expr::one()]);
    for x in [[0.1, 0.4, -0.3], [-0.7, 0.0, 1.1]] {
        let gam = g.christoffel(&x).unwrap();
        assert!((gam[idx3(3, 0, 0, 0)] - 1.0).abs() < 1e-12);
        assert!((gam[idx3(3, 0, 1, 1)] + 1.0).abs() < 1e-12);
        assert!((gam[idx3(3, 0, 2, 2)] + 1.0).abs() < 1e-12);
    }
}

#[test]
fn christoffel_symmetric_in_lower_indices() {
    let mut rng = seeded(1);
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let gam = g.christoffel(&[0.2, -0.5, 0.9]).unwrap();
    for l in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(gam[idx3(3, l, j, k)], gam[idx3(3, l, k, j)]);
            }
        }
    }
}

#[test]
fn hessian_matches_covariant_derivative_of_gradient() {
    let mut rng = seeded(2);
    for n in [2, 3, 4] {
        let g = random_metric(&mut rng, Chart::cube(n, 2.0));
        let phi = random_function(&mut rng, n);
        let x = in_ball(&mut rng, &vec![0.0; n], 1.0);
        let rep = grad_hessian(&g, &phi, &x).unwrap();
        for _ in 0..10 {
            let xv = on_sphere(&mut rng, n);
            let yv = on_sphere(&mut rng, n);
            let h = DVector::from_vec(xv.clone()).dot(&(&rep.hessian * DVector::from_vec(yv.clone())));
            let p = covariant_gradient_pairing(&g, &phi, &x, &xv, &yv).unwrap();
            assert!((h - p).abs() <= 1e-6 * h.abs().max(p.abs()).max(1.0), "{h} vs {p}");
        }
    }
}

#[test]
fn hessian_is_second_derivative_along_geodesics() {
    let mut rng = seeded(3);
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let phi = random_function(&mut rng, 3);
    let f = phi.real_part().unwrap();
    let x = [0.3, -0.2, 0.1];
    let rep = grad_hessian(&g, &phi, &x).unwrap();
    let v = on_sphere(&mut rng, 3);
    let h = 1e-3;
    let at = |t: f64| {
        let s = geodesic_flow(&g, &x, &v, t, 40).unwrap();
        f.at(&s.x[..3])
    };
    let d2 = (at(h) - 2.0 * f.at(&x) + at(-h)) / (h * h);
    let vv = DVector::from_vec(v.clone());
    let hvv = vv.dot(&(&rep.hessian * &vv));
    assert!((d2 - hvv).abs() <= 1e-5 * hvv.abs().max(1.0), "{d2} vs {hvv}");
}

#[test]
fn laplacian_examples() {
    let x = Expr::coords(2);
    let e2 = ChartMetric::euclidean(Chart::cube(2, 2.0));
    let harm = ScalarField::real(2, x[0].sq() - x[1].sq());
    assert!(laplace_beltrami(&e2, &harm, &[0.3, 0.7]).unwrap().norm() < 1e-13);
    let x = Expr::coords(3);
    let q = ScalarField::real(3, Expr::dot(&x, &x));
    let e3 = ChartMetric::euclidean(Chart::cube(3, 2.0));
    assert!((laplace_beltrami(&e3, &q, &[0.1, 0.2, 0.3]).unwrap().re - 6.0).abs() < 1e-13);
}

#[test]
fn laplacian_is_trace_of_hessian() {
    let mut rng = seeded(4);
    for _ in 0..5 {
        let g = random_metric(&mut rng, Chart::cube(3, 2.0));
        let phi = random_function(&mut rng, 3);
        let x = in_ball(&mut rng, &[0.0; 3], 1.0);
        let rep = grad_hessian(&g, &phi, &x).unwrap();
        let tr = (g.inverse(&x).unwrap() * &rep.hessian).trace();
        let lap = laplace_beltrami(&g, &phi, &x).unwrap().re;
        assert!((tr - lap).abs() <= 1e-10 * tr.abs().max(1.0), "{tr} vs {lap}");
    }
}

#[test]
fn log_weight_laplacian_under_rescaled_metric() {
    // |∇φ|²_e = 1/|x|² for φ = log|x|; under g̃ the weight is a distance function.
    let x = Expr::coords(3);
    let r2 = Expr::dot(&x, &x);
    let phi = ScalarField::real(3, r2.ln() * 0.5);
    let gt = ChartMetric::euclidean(Chart::cube(3, 3.0)).conformal(&(1.0 / r2));
    for p in [[1.0, 0.0, 0.0], [0.3, -0.4, 0.2]] {
        let rep = grad_hessian(&gt, &phi, &p).unwrap();
        let lap = laplace_beltrami(&gt, &phi, &p).unwrap().re;
        let lambda = rep.lambda.unwrap();
        assert!((lap - lambda).abs() <= 1e-10, "{lap} vs (n-2) {lambda}");
        let g = gt.value(&p).unwrap();
        let grad = DVector::from_vec(rep.gradient.clone());
        assert!((grad.dot(&(&g * &grad)) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn curvature_vanishes_for_euclidean() {
    let r = curvature(&ChartMetric::euclidean(Chart::cube(4, 2.0)), &[0.1, 0.2, 0.3, 0.4]).unwrap();
    assert_eq!(r.max_abs_riemann(), 0.0);
    assert_eq!(r.scalar, 0.0);
    assert!(max_abs(r.weyl.as_ref().unwrap()) == 0.0);
    assert!(max_abs(r.cotton.as_ref().unwrap()) == 0.0);
}

#[test]
fn curvature_symmetries_and_traces() {
    let mut rng = seeded(5);
    for n in [3, 4] {
        let g = random_metric(&mut rng, Chart::cube(n, 2.0));
        let x = in_ball(&mut rng, &vec![0.0; n], 1.0);
        let r = curvature(&g, &x).unwrap();
        let s = r.max_abs_riemann();
        assert!(s > 1e-3);
        let tol = 1e-10 * s;
        let ginv = g.inverse(&x).unwrap();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let v = r.r(a, b, c, d);
                        assert!((v + r.r(b, a, c, d)).abs() <= tol);
                        assert!((v + r.r(a, b, d, c)).abs() <= tol);
                        assert!((v - r.r(c, d, a, b)).abs() <= tol);
                        assert!((v + r.r(b, c, a, d) + r.r(c, a, b, d)).abs() <= tol);
                    }
                }
                let mut ric = 0.0;
                let mut wtr = 0.0;
                for a2 in 0..n {
                    for d in 0..n {
                        ric += ginv[(a2, d)] * r.r(a2, a, b, d);
                        wtr += ginv[(a2, d)] * r.w(a2, a, d, b);
                    }
                }
                assert!((ric - r.ricci[(a, b)]).abs() <= tol);
                assert!((r.ricci[(a, b)] - r.ricci[(b, a)]).abs() <= tol);
                assert!(wtr.abs() <= tol);
            }
        }
        let scal = (ginv.component_mul(&r.ricci)).sum();
        assert!((scal - r.scalar).abs() <= tol);
    }
}

#[test]
fn warped_product_curvature_vanishes_on_mixed_components() {
    let g = warped(stereographic(2, 0.5, 1, 3));
    for x in [[0.2, 0.3, -0.1], [-0.5, -0.4, 0.6]] {
        let r = curvature(&g, &x).unwrap();
        let s = r.max_abs_riemann();
        assert!(s > 0.1);
        for b in 1..3 {
            for c in 1..3 {
                assert!(r.r(0, b, c, 0).abs() <= 1e-6 * s, "R_1{b}{c}1 = {}", r.r(0, b, c, 0));
            }
        }
    }
}

#[test]
fn conformally_flat_four_metric_has_no_weyl() {
    let mut rng = seeded(6);
    let c = random_factor(&mut rng, 4);
    let g = ChartMetric::euclidean(Chart::cube(4, 2.0)).conformal(&c);
    let r = curvature(&g, &[0.1, -0.3, 0.2, 0.5]).unwrap();
    let s = r.max_abs_riemann();
    assert!(max_abs(r.weyl.as_ref().unwrap()) <= 1e-5 * s);
}

#[test]
fn weyl_scales_with_conformal_factor() {
    let mut rng = seeded(7);
    let g = random_metric(&mut rng, Chart::cube(4, 2.0));
    let c = random_factor(&mut rng, 4);
    let x = [0.2, 0.1, -0.4, 0.3];
    let w = curvature(&g, &x).unwrap().weyl.unwrap();
    let wc = curvature(&g.conformal(&c), &x).unwrap().weyl.unwrap();
    let cv = c.at(&x);
    let s = max_abs(&w) * cv;
    assert!(max_abs(&w) > 1e-3);
    let dev: Vec<f64> = w.iter().zip(&wc).map(|(a, b)| b - cv * a).collect();
    assert!(max_abs(&dev) <= 1e-8 * s, "{}", max_abs(&dev));
}

#[test]
fn cotton_is_conformally_invariant_in_three_dimensions() {
    let mut rng = seeded(8);
    let c = random_factor(&mut rng, 3);
    let flat = ChartMetric::euclidean(Chart::cube(3, 2.0)).conformal(&c);
    let x = [0.3, -0.2, 0.4];
    let rf = curvature(&flat, &x).unwrap();
    assert!(max_abs(rf.cotton.as_ref().unwrap()) <= 1e-5 * max_abs(rf.rho.as_ref().unwrap().as_slice()).max(1.0));
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let cg = curvature(&g, &x).unwrap().cotton.unwrap();
    let ccg = curvature(&g.conformal(&c), &x).unwrap().cotton.unwrap();
    let s = max_abs(&cg);
    assert!(s > 1e-3);
    let dev: Vec<f64> = cg.iter().zip(&ccg).map(|(a, b)| a - b).collect();
    assert!(max_abs(&dev) <= 1e-5 * s, "{} vs {s}", max_abs(&dev));
}

#[test]
fn metric_jets_agree_with_finite_differences() {
    let mut rng = seeded(9);
    let g = random_metric(&mut rng, Chart::cube(3, 2.0));
    let x = [0.2, -0.1, 0.3];
    let mj = g.jets(&x, 2).unwrap();
    let val = |p: &[f64], j: usize, k: usize| g.value(p).unwrap()[(j, k)];
    let (j, k) = (0, 2);
    let mut e1 = Vec::new();
    let mut e2 = Vec::new();
    for h in [1e-2, 5e-3, 2.5e-3] {
        let mut xp = x;
        let mut xm = x;
        xp[1] += h;
        xm[1] -= h;
        let d1 = (val(&xp, j, k) - val(&xm, j, k)) / (2.0 * h);
        let d2 = (val(&xp, j, k) - 2.0 * val(&x, j, k) + val(&xm, j, k)) / (h * h);
        e1.push((d1 - mj.g[j * 3 + k].d(1)).abs());
        e2.push((d2 - mj.g[j * 3 + k].dd(1, 1)).abs());
    }
    assert!(observed_order(&e1) >= 1.9, "{e1:?}");
    assert!(observed_order(&e2) >= 1.9, "{e2:?}");
    assert!((mj.det.value() - g.value(&x).unwrap().determinant()).abs() < 1e-12);
}

#[test]
fn field_classification_examples() {
    let e3 = ChartMetric::euclidean(Chart::cube(3, 3.0));
    let pts = vec![vec![0.5, 0.2, -0.3], vec![-1.0, 0.7, 0.4]];
    let tol = Tolerance::default();
    let constant = OneFormField::real(vec![Expr::c(1.0), Expr::c(-2.0), Expr::c(0.5)]);
    let c = field_classify(&e3, &constant, &pts, &tol).unwrap();
    assert!(c.is_parallel && c.is_killing && c.is_conformal_killing);
    // |∇φ|⁻²∇φ = x for φ = log|x|.
    let radial = OneFormField::real(Expr::coords(3));
    let c = field_classify(&e3, &radial, &pts, &tol).unwrap();
    assert!(c.is_conformal_killing && !c.is_killing);
    assert!(c.lambda_estimates.iter().all(|l| (l - 2.0).abs() < 1e-12));
    let complex = OneFormField::zero(3).add(&OneFormField {
        comps: vec![carleman_core::CExpr::i(), carleman_core::CExpr::zero(), carleman_core::CExpr::zero()],
    });
    assert!(field_classify(&e3, &complex, &pts, &tol).is_err());
}

#[test]
fn plane_has_vanishing_second_fundamental_form() {
    let u = Expr::coords(2);
    let p = HypersurfacePatch {
        param: vec![u[0].clone(), u[1].clone() * 2.0 + u[0].clone(), Expr::c(0.3)],
        reference: vec![0.0, 0.0, 1.0],
    };
    let s = second_fundamental_form(&ChartMetric::euclidean(Chart::cube(3, 3.0)), &p, &[0.2, 0.1]).unwrap();
    assert!(s.ell.iter().all(|v| v.abs() < 1e-14));
    let bad = HypersurfacePatch { param: vec![u[0].clone(), u[0].clone(), Expr::zero()], reference: vec![0.0, 0.0, 1.0] };
    assert!(second_fundamental_form(&ChartMetric::euclidean(Chart::cube(3, 3.0)), &bad, &[0.2, 0.1]).is_err());
}

#[test]
fn log_level_sets_are_umbilic_with_curvature_mu() {
    let x = Expr::coords(3);
    let phi = ScalarField::real(3, Expr::dot(&x, &x).ln() * 0.5);
    let e3 = ChartMetric::euclidean(Chart::cube(3, 3.0));
    for rho in [0.5, 1.0, 2.0] {
        let u = Expr::coords(2);
        let param = vec![u[0].sin() * u[1].cos() * rho, u[0].sin() * u[1].sin() * rho, u[0].cos() * rho];
        let uu = [1.1, -0.4];
        let pt: Vec<f64> = param.iter().map(|e| e.at(&uu)).collect();
        let rep = grad_hessian(&e3, &phi, &pt).unwrap();
        let p = HypersurfacePatch { param, reference: rep.gradient.clone() };
        let s = second_fundamental_form(&e3, &p, &uu).unwrap();
        let mu = rep.mu.unwrap();
        for k in &s.principal_curvatures {
            assert!((k - mu).abs() < 1e-10, "{k} vs {mu}");
        }
    }
}
