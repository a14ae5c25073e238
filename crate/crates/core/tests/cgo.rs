use carleman_core::builders;
use carleman_core::cgo::*;
use carleman_core::geometry::laplace_beltrami;
use carleman_core::rng::seeded;
use carleman_core::transport::{polar_normal, SimpleManifold};
use carleman_core::{CExpr, Expr, OneFormField, ScalarField};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn grid(n: usize, thetas: Vec<f64>) -> CgoGrid {
    CgoGrid { x1: [-0.5, 0.5], r: [0.2, 0.9], n_x1: n, n_r: n, thetas }
}

fn curved_c() -> Expr {
    let x = Expr::coords(3);
    1.2 + 0.3 * (x[0].clone() + 0.7 * x[1].clone()).sin() * (-x[2].sq()).exp()
}

fn curved() -> AdmissibleMetric {
    AdmissibleMetric::new(curved_c(), 1.0, [0.2, -0.1], 1.0).unwrap()
}

fn hyperbolic() -> AdmissibleMetric {
    let x = Expr::coords(3);
    AdmissibleMetric::new((0.4 * x[0].clone() - 0.3 * x[2].clone()).exp(), -1.0, [0.0, 0.0], 1.2).unwrap()
}

fn exp_amp(lambda: f64) -> CgoAmplitude {
    let b = CExpr::new(Expr::var(0).cos(), 0.5 * (2.0 * Expr::var(0)).sin());
    CgoAmplitude::new(HolomorphicSpec::Exponential { lambda }.expr(), b)
}

#[test]
fn determinant_is_c_cubed_m() {
    for am in [curved(), hyperbolic()] {
        let g = am.assemble().unwrap();
        let c = am.c_polar();
        let m = am.m_expr();
        for p in grid(3, vec![0.0, 1.0, 4.0]).points() {
            let det = g.value(&p).unwrap().determinant();
            let exact = c.at(&p).powi(3) * m.at(&p);
            assert!((det - exact).abs() <= 1e-10 * exact.abs().max(1.0));
        }
    }
}

#[test]
fn polar_block_obeys_gauss_lemma_and_matches_shooting() {
    let am = curved();
    let [grr, grt, gtt] = am.polar_block();
    // Independent oracle: numerical polar normal coordinates of g₀.
    let s = am.polar.euclidean_radius(am.radius);
    let w = am.polar.omega;
    let y = Expr::coords(2);
    let beta = s * s - (y[0].clone() - w[0]).sq() - (y[1].clone() - w[1]).sq();
    let chart = am.g0.chart.clone().with_boundary(beta.clone());
    let disc = SimpleManifold::new(carleman_core::ChartMetric::new(chart, am.g0.components().to_vec()).unwrap(), beta)
        .unwrap()
        .with_center(w.to_vec());
    let pn = polar_normal(&disc, &w).unwrap();
    for r in [0.25, 0.5, 0.8] {
        for th in [0.0, 1.1, 3.5] {
            let p = [0.0, r, th];
            let scale = gtt.at(&p);
            assert!((grr.at(&p) - 1.0).abs() <= 1e-6 * scale.max(1.0));
            assert!(grt.at(&p).abs() <= 1e-6 * scale.max(1.0));
            assert!((scale - r.sin().powi(2)).abs() <= 1e-12);
            let (nr, cross, m) = pn.metric_entries(r, th).unwrap();
            assert!((nr - 1.0).abs() < 1e-6 && cross.abs() < 1e-6 * scale.max(1.0));
            assert!((m - scale).abs() <= 1e-6 * scale, "{m} vs {scale}");
        }
    }
}

#[test]
fn conjugate_radius_rejected() {
    assert!(AdmissibleMetric::new(Expr::one(), 1.0, [0.0, 0.0], 3.3).is_err());
    assert!(AdmissibleMetric::new(Expr::c(-1.0), 0.0, [0.0, 0.0], 1.0).is_err());
}

#[test]
fn eikonal_exact_for_any_c_and_wrong_phase_detected() {
    let flat = AdmissibleMetric::new(Expr::one(), 0.0, [0.0, 0.0], 1.0).unwrap();
    for am in [flat, curved(), hyperbolic()] {
        let g = grid(5, vec![0.0, 2.0]);
        assert!(eikonal_residual(&am, 1.0, &g).unwrap().max <= 1e-12);
        let bad = eikonal_residual(&am, 2.0, &g).unwrap();
        assert!(bad.max >= 3.0 * bad.min_c_inverse * (1.0 - 1e-12));
    }
}

#[test]
fn grid_touching_origin_rejected() {
    let am = curved();
    let mut g = grid(4, vec![0.0]);
    g.r[0] = 0.05;
    assert!(eikonal_residual(&am, 1.0, &g).is_err());
}

#[test]
fn transport_holds_for_holomorphic_factors() {
    let g = grid(6, vec![0.4, 2.5]);
    for am in [curved(), hyperbolic()] {
        for lambda in [0.0, 1.5, -3.0] {
            let rep = transport_residual(&am, &exp_amp(lambda), &g).unwrap();
            assert!(rep.residual <= 1e-7 * rep.scale.max(1.0), "{rep:?}");
            assert!(rep.holomorphy_defect <= 1e-12);
        }
        for k in 1..4 {
            let amp = CgoAmplitude::new(HolomorphicSpec::Power { k }.expr(), CExpr::one());
            let rep = transport_residual(&am, &amp, &g).unwrap();
            assert!(rep.residual <= 1e-7 * rep.scale.max(1.0), "{rep:?}");
        }
    }
}

#[test]
fn transport_random_positive_c() {
    let mut rng = seeded(3);
    let g = grid(5, vec![1.0]);
    for _ in 0..5 {
        let x = Expr::coords(3);
        let c = (rng.random_range(-0.5..0.5) * x[0].clone()
            + rng.random_range(-0.5..0.5) * x[1].sq()
            + rng.random_range(-0.5..0.5) * x[2].clone() * x[0].clone())
        .exp();
        let am = AdmissibleMetric::new(c, rng.random_range(-1.0..1.0), [0.1, 0.0], 1.0).unwrap();
        let rep = transport_residual(&am, &exp_amp(rng.random_range(-2.0..2.0)), &g).unwrap();
        assert!(rep.residual <= 1e-5 * rep.scale, "{rep:?}");
    }
}

#[test]
fn non_holomorphic_factor_violates_transport() {
    let g = grid(5, vec![0.0, 1.0]);
    let amp = CgoAmplitude::new(HolomorphicSpec::ConjugatePower { k: 1 }.expr(), CExpr::one());
    let rep = transport_residual(&curved(), &amp, &g).unwrap();
    assert!(rep.holomorphy_defect > 0.5);
    assert!(rep.residual >= 0.1 * rep.scale, "{rep:?}");
}

fn bump_potential() -> OneFormField {
    let x = Expr::coords(3);
    let bump = (-(x[0].sq() + (x[1].clone() - 0.55).sq()) / 0.05).exp();
    OneFormField::real(vec![bump.clone() * (1.0 + 0.3 * x[2].cos()), 0.5 * x[0].clone() * bump, Expr::zero()])
}

#[test]
fn magnetic_phase_trivial_and_constant() {
    let am = curved();
    let g = grid(64, vec![0.0]);
    let zero = magnetic_phase(&am, &OneFormField::real(vec![Expr::zero(); 3]), &g).unwrap();
    assert!(zero.values.iter().all(|v| v.norm() == 0.0));
    let a = OneFormField::real(vec![Expr::c(-2.0), Expr::zero(), Expr::zero()]);
    let pf = magnetic_phase(&am, &a, &grid(128, vec![0.0])).unwrap();
    assert!(pf.residual <= 1e-4, "{}", pf.residual);
    assert!(pf.dbar.iter().all(|d| (d - 1.0).norm() <= 1e-4));
}

#[test]
fn magnetic_phase_refines() {
    let am = curved();
    let a = bump_potential();
    let res: Vec<f64> = [32, 64, 128].iter().map(|n| magnetic_phase(&am, &a, &grid(*n, vec![0.7])).unwrap().residual).collect();
    assert!(res[1] <= 0.5 * res[0] && res[2] <= 0.5 * res[1], "{res:?}");
}

#[test]
fn magnetic_transport_tracks_phase_residual() {
    let am = curved();
    let g = grid(64, vec![0.7, 2.0]);
    let a = bump_potential();
    let pf = magnetic_phase(&am, &a, &g).unwrap();
    let phi_res = pf.residual;
    let base = transport_residual(&am, &exp_amp(1.0), &g).unwrap();
    let mag = transport_residual(&am, &exp_amp(1.0).with_phase(pf), &g).unwrap();
    let rel = mag.residual / mag.amplitude_scale;
    assert!(rel <= 2.0 * phi_res + 1e-7 * base.scale.max(1.0), "{rel} vs {phi_res}");
    // A mismatched grid is refused.
    let other = magnetic_phase(&am, &a, &grid(32, vec![0.7])).unwrap();
    assert!(transport_residual(&am, &exp_amp(1.0).with_phase(other), &g).is_err());
}

#[test]
fn scan_has_slope_two() {
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let x = Expr::coords(3);
    let q = CExpr::new(1.0 + x[1].clone() * x[2].clone(), 0.2 * x[0].clone());
    for am in [curved(), hyperbolic()] {
        let rep = residual_scan(&am, &q, &exp_amp(0.8), 1.0, &hs, &grid(6, vec![0.5, 3.0])).unwrap();
        assert!((rep.slope - 2.0).abs() <= 0.05, "{rep:?}");
        assert!(rep.normalized_spread <= 1e-8, "{rep:?}");
        let bad = residual_scan(&am, &q, &exp_amp(0.8), 2.0, &hs, &grid(6, vec![0.5])).unwrap();
        assert!(bad.slope <= 0.1, "{bad:?}");
    }
    assert!(residual_scan(&curved(), &q, &exp_amp(0.8), 1.0, &[], &grid(4, vec![0.0])).is_err());
}

#[test]
fn termwise_operator_matches_direct_conjugation() {
    let am = curved();
    let metric = am.assemble().unwrap();
    let amp = exp_amp(0.6);
    let a = amp.base_expr(&am);
    let x = Expr::coords(3);
    let q = am.to_polar(&CExpr::real(1.0 + x[0].sq()));
    let h = 0.3;
    let rho = CExpr::new(Expr::var(0), Expr::var(1));
    let u = (rho.scale(Expr::c(-1.0 / h))).exp() * a;
    for p in [[0.1, 0.4, 0.2], [-0.3, 0.7, 2.2]] {
        let t = conjugated_terms(&metric, &amp.base_expr(&am), &q, 1.0, &p).unwrap();
        let lap = laplace_beltrami(&metric, &ScalarField::complex(3, u.clone()), &p).unwrap();
        let direct = (Complex64::new(p[0], p[1]) / h).exp() * h * h * (-lap + q.at(&p) * u.at(&p));
        assert!((direct - t.at_h(h)).norm() <= 1e-10 * direct.norm().max(1.0), "{direct} vs {}", t.at_h(h));
    }
}

proptest! {
    #[test]
    fn bilinear_extension_identity(v in proptest::collection::vec(-2.0f64..2.0, 6), d in proptest::collection::vec(0.5f64..2.0, 3)) {
        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
        let re = [v[0], v[1], v[2]];
        let im = [v[3], v[4], v[5]];
        let z: Vec<Complex64> = (0..3).map(|i| Complex64::new(re[i], im[i])).collect();
        let ip = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|i| g[(i, i)] * a[i] * b[i]).sum::<f64>();
        let expected = Complex64::new(ip(&re, &re) - ip(&im, &im), 2.0 * ip(&re, &im));
        prop_assert!((bilinear(&g, &z, &z) - expected).norm() <= 1e-12);
    }
}

#[test]
fn builders_untouched() {
    // The admissible g₀ with k = 0 coincides with the flat disc builder.
    let m = builders::flat_disc(1.0);
    let am = AdmissibleMetric::new(Expr::one(), 0.0, [0.0, 0.0], 1.0).unwrap();
    assert_eq!(am.g0.value(&[0.3, 0.1]).unwrap(), m.metric.value(&[0.3, 0.1]).unwrap());
}
