use carleman_core::builders;
use carleman_core::rng::seeded;
use carleman_core::transport::{build_fan, SimpleManifold};
use carleman_core::xray::*;
use carleman_core::{CExpr, Expr, OneFormField, ScalarField};
use nalgebra::DVector;
use num_complex::Complex64;
use std::f64::consts::PI;

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn gaussian() -> ScalarField {
    let x = Expr::coords(2);
    ScalarField::real(2, (-4.0 * Expr::dot(&x, &x)).exp())
}

fn cap() -> SimpleManifold {
    builders::sphere_cap(0.6)
}

fn observed_order(e: &[f64]) -> f64 {
    (e[e.len() - 2] / e[e.len() - 1]).log2()
}

#[test]
fn forward_matches_chord_quadrature_oracle() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 7, 5, 0.01, None).unwrap();
    let mu = -0.2;
    let meas = forward(&m, &ScalarField::constant(2, mu), &gaussian(), None, &fan).unwrap();
    for (e, r) in meas.entries.iter().zip(&fan.rays) {
        let (p, d) = (r.point, r.direction);
        let len = 2.0 * r.alpha.cos();
        let g = |t: f64| {
            let (x, y) = (p[0] + t * d[0], p[1] + t * d[1]);
            (-4.0 * (x * x + y * y)).exp() * (mu * t).exp()
        };
        let oracle = adaptive_simpson(&g, 0.0, len, 1e-13);
        assert!((e.value.re - oracle).abs() <= 1e-8, "{} vs {oracle}", e.value.re);
        assert_eq!(e.value.im, 0.0);
    }
}

#[test]
fn forward_is_linear() {
    let m = cap();
    let fan = build_fan(&m, 5, 4, 0.01, None).unwrap();
    let a = ScalarField::real(2, 0.3 * Expr::var(0));
    let x = Expr::coords(2);
    let f1 = gaussian();
    let f2 = ScalarField::complex(2, CExpr::new(x[0].clone() * x[1].clone(), x[1].sin()));
    let al = OneFormField::real(vec![x[1].clone(), -x[0].clone()]);
    let c1 = 1.7;
    let c2 = Complex64::new(-0.4, 0.9);
    let comb = ScalarField::complex(
        2,
        f1.value.scale(Expr::c(c1)) + f2.value.clone() * CExpr::new(Expr::c(c2.re), Expr::c(c2.im)),
    );
    let y1 = forward(&m, &a, &f1, Some(&al), &fan).unwrap().values();
    let y2 = forward(&m, &a, &f2, None, &fan).unwrap().values();
    let yc = forward(&m, &a, &comb, Some(&OneFormField::real(al.comps.iter().map(|c| c.re.clone() * c1).collect())), &fan)
        .unwrap()
        .values();
    for k in 0..yc.len() {
        let lin = y1[k] * c1 + y2[k] * c2;
        assert!((yc[k] - lin).norm() <= 1e-12 * (1.0 + lin.norm()));
    }
}

#[test]
fn exact_differential_integrates_to_zero() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 6, 6, 0.01, None).unwrap();
    let x = Expr::coords(2);
    let p = (1.0 - Expr::dot(&x, &x)) * (x[0].clone() + 2.0).exp();
    let meas = forward(
        &m,
        &ScalarField::constant(2, 0.0),
        &ScalarField::constant(2, 0.0),
        Some(&OneFormField::real(vec![p.diff(0), p.diff(1)])),
        &fan,
    )
    .unwrap();
    assert!(meas.max_abs() < 1e-9, "{}", meas.max_abs());
}

#[test]
fn kernel_probe_flat_and_trivial() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 16, 16, 0.01, None).unwrap();
    let x = Expr::coords(2);
    let a = ScalarField::constant(2, 0.1);
    let k = kernel_probe(&m, &a, &(1.0 - Expr::dot(&x, &x)), &fan, 1e-10).unwrap();
    assert!(k.p_vanishes_on_boundary);
    assert!(k.max_abs <= 1e-7, "{}", k.max_abs);
    let z = kernel_probe(&m, &a, &Expr::zero(), &fan, 1e-10).unwrap();
    assert_eq!(z.max_abs, 0.0);
    let bad = kernel_probe(&m, &a, &Expr::c(1.0), &fan, 1e-10).unwrap();
    assert!(!bad.p_vanishes_on_boundary);
}

#[test]
fn kernel_probe_converges_on_curved_metric() {
    let base = cap();
    let x = Expr::coords(2);
    let beta = base.beta.clone();
    let a = ScalarField::real(2, 0.4 + 0.2 * x[0].sin() * x[1].clone());
    let mut errs = Vec::new();
    for step in [0.04, 0.02, 0.01] {
        let m = base.clone().with_step(step);
        let fan = build_fan(&m, 6, 5, 0.01, None).unwrap();
        let k = kernel_probe(&m, &a, &beta.sq(), &fan, 1e-10).unwrap();
        errs.push(k.max_abs);
    }
    assert!(errs[2] < errs[1] && errs[1] < errs[0], "{errs:?}");
    assert!(observed_order(&errs) >= 2.0, "{errs:?}");
}

#[test]
fn pestov_zeta_independent_function() {
    let m = cap();
    let x = Expr::coords(2);
    let u = SphereBundleFunction::from_base(&ScalarField::real(2, (x[0].clone() * 1.3).sin() * x[1].clone().exp()));
    let t = pestov_terms(&m.metric, &u, &[0.1, 0.2], 2.1, JetMode::Exact).unwrap();
    assert!(t.residual() <= 1e-6 * t.scale().max(1.0), "{t:?}");
}

#[test]
fn pestov_holds_on_curved_metrics() {
    let mut rng = seeded(11);
    let x_conf = Expr::coords(2);
    let warped = builders::conformal_disc(1.0, (0.3 * x_conf[0].clone() - 0.2 * x_conf[1].sq()).exp()).unwrap();
    for m in [cap(), warped] {
        for _ in 0..20 {
            let u = SphereBundleFunction::random(&mut rng, true);
            let p = carleman_core::rng::in_ball(&mut rng, &[0.0, 0.0], 0.5);
            let z = rand::Rng::random_range(&mut rng, 0.0..2.0 * PI);
            let t = pestov_terms(&m.metric, &u, &p, z, JetMode::Exact).unwrap();
            assert!(t.residual() <= 1e-9 * t.scale().max(1.0), "{t:?}");
            assert!(t.curvature.abs() > 0.0 || t.scale() == 0.0);
        }
    }
}

#[test]
fn pestov_finite_difference_order() {
    let m = cap();
    let mut rng = seeded(5);
    for _ in 0..5 {
        let u = SphereBundleFunction::random(&mut rng, false);
        let errs: Vec<f64> = [2e-2, 1e-2]
            .iter()
            .map(|h| pestov_terms(&m.metric, &u, &[0.15, -0.2], 0.7, JetMode::FiniteDifference(*h)).unwrap().residual())
            .collect();
        assert!(observed_order(&errs) >= 1.9, "{errs:?}");
    }
}

#[test]
fn santalo_constant_on_flat_disc() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 64, 32, 0.01, None).unwrap();
    let one = SphereBundleFunction::real(Expr::c(1.0));
    let rep = santalo_residual(&m, &one, &fan, &SmQuadrature::default()).unwrap();
    let target = 2.0 * PI * PI;
    assert!((rep.lhs.re - target).abs() <= 1e-3 * target, "{:?}", rep.lhs);
    assert!((rep.rhs.re - target).abs() <= 1e-3 * target, "{:?}", rep.rhs);
}

#[test]
fn santalo_base_function_factors() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 64, 32, 0.01, None).unwrap();
    let v = SphereBundleFunction::from_base(&gaussian());
    let rep = santalo_residual(&m, &v, &fan, &SmQuadrature::default()).unwrap();
    // ∫_disc exp(−4r²) = π(1 − e⁻⁴)/4
    let exact = 2.0 * PI * PI * (1.0 - (-4.0f64).exp()) / 4.0;
    assert!((rep.lhs.re - exact).abs() <= 1e-9, "{:?}", rep.lhs);
    assert!(rep.residual <= 1e-3 * exact, "{rep:?}");
}

#[test]
fn santalo_refines_on_curved_metric() {
    let m = cap();
    let x = Expr::coords(2);
    let z = Expr::var(2);
    let v = SphereBundleFunction::new(CExpr::real((1.0 + x[0].clone() * z.cos()) * (x[1].clone() + 0.5).exp()));
    let q = SmQuadrature::default();
    let mut reps = Vec::new();
    for (nb, na) in [(16, 8), (32, 16), (64, 32)] {
        let fan = build_fan(&m, nb, na, 0.01, None).unwrap();
        reps.push(santalo_residual(&m, &v, &fan, &q).unwrap());
    }
    let errs: Vec<f64> = reps.iter().map(|r| r.residual).collect();
    assert!(observed_order(&errs) >= 1.0, "{errs:?}");
    assert!(santalo_refinement_ok(&reps[1], &reps[2], 1e-12));
}

#[test]
fn system_reproduces_forward_of_constant() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 16, 16, 0.01, None).unwrap();
    let grid = NodalGrid::covering(&m, 12, 12).unwrap();
    let a = ScalarField::constant(2, -0.2);
    let sys = build_system::<f64>(&m, &a, &fan, &grid, Unknowns::Function).unwrap();
    assert_eq!(sys.matrix.nrows(), fan.rays.len());
    assert!(sys.zero_rows.is_empty());
    let one = ScalarField::constant(2, 1.0);
    let y = forward(&m, &a, &one, None, &fan).unwrap().values();
    let d = sys.apply(&sys.project_function(&one).unwrap());
    for (p, q) in y.iter().zip(d.iter()) {
        assert!((p.re - q).abs() <= 1e-3);
    }
    let (lo, hi) = sys.singular_range();
    assert!(lo > 0.0 && hi / lo < 1e8);
    let zero = invert(&sys, &vec![Complex64::new(0.0, 0.0); y.len()]).unwrap();
    assert!(zero.coeffs.iter().all(|c| *c == 0.0));
}

#[test]
fn complex_system_rejects_real_cast_and_caches() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 8, 8, 0.01, None).unwrap();
    let grid = NodalGrid::covering(&m, 8, 8).unwrap();
    let a = ScalarField::complex(2, CExpr::new(Expr::c(0.0), Expr::c(0.5)));
    assert!(build_system::<f64>(&m, &a, &fan, &grid, Unknowns::Function).is_err());
    let sys = build_system::<Complex64>(&m, &a, &fan, &grid, Unknowns::Function).unwrap();
    let dir = std::env::temp_dir().join(format!("xrtm-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.xrtm");
    sys.save_matrix(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 16 + 16 * sys.matrix.nrows() * sys.matrix.ncols());
    assert_eq!(read_xrtm::<Complex64>(&path).unwrap(), sys.matrix);
    let mut bad = bytes.clone();
    bad[0] = b'Y';
    assert!(decode_xrtm::<Complex64>(&bad).is_err());
    assert!(decode_xrtm::<Complex64>(&bytes[..bytes.len() - 3]).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn near_kernel_aligns_with_gauge_elements() {
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 32, 32, 0.01, None).unwrap();
    let grid = NodalGrid::covering(&m, 10, 10).unwrap();
    let a0 = 0.3;
    let sys = build_system::<f64>(&m, &ScalarField::constant(2, a0), &fan, &grid, Unknowns::FunctionAndForm).unwrap();
    let nd = sys.dofs.len();
    // Columns scaled to unit norm so weak boundary hats do not masquerade as kernel.
    let norms: Vec<f64> = (0..3 * nd).map(|j| sys.matrix.column(j).norm()).collect();
    let mut a = sys.matrix.clone();
    for (j, n) in norms.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / n);
    }
    let x = Expr::coords(2);
    let beta = 1.0 - Expr::dot(&x, &x);
    let mut gauge = Vec::new();
    for i in 0..6 {
        for j in 0..6 - i {
            let p = beta.clone() * x[0].powi(i) * x[1].powi(j);
            let (p1, p2) = (p.diff(0), p.diff(1));
            let mut v = DVector::zeros(3 * nd);
            for (c, k) in sys.dofs.iter().enumerate() {
                let q = grid.node(*k);
                v[c] = a0 * p.at(&q) * norms[c];
                v[nd + c] = p1.at(&q) * norms[nd + c];
                v[2 * nd + c] = p2.at(&q) * norms[2 * nd + c];
            }
            gauge.push(v);
        }
    }
    let q = nalgebra::DMatrix::from_columns(&gauge).qr().q();
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|i, j| svd.singular_values[*i].partial_cmp(&svd.singular_values[*j]).unwrap());
    for &i in idx.iter().take(4) {
        let v = vt.row(i).transpose();
        let cos = (q.transpose() * &v).norm() / v.norm();
        assert!(cos >= 0.99, "singular value {} cosine {cos}", svd.singular_values[i]);
    }
}

struct AcceptanceRun {
    sigma_min: f64,
    condition: f64,
    clean: f64,
    noisy: f64,
}

/// Flat disc at 32×32 nodes and a 64×64 fan; inversion of `exp(−4|x|²)` with
/// `a ≡ −0.2`, clean and with 1% (of the RMS measurement) Gaussian noise.
fn acceptance_run() -> AcceptanceRun {
    use rand_distr::{Distribution, Normal};
    let m = builders::flat_disc(1.0);
    let fan = build_fan(&m, 64, 64, 0.01, None).unwrap();
    let grid = NodalGrid::covering(&m, 32, 32).unwrap();
    let a = ScalarField::constant(2, -0.2);
    let sys = build_system::<f64>(&m, &a, &fan, &grid, Unknowns::Function).unwrap();
    let unattenuated = build_system::<f64>(&m, &ScalarField::constant(2, 0.0), &fan, &grid, Unknowns::Function).unwrap();
    let (lo, hi) = unattenuated.singular_range();
    let f = gaussian();
    let y = forward(&m, &a, &f, None, &fan).unwrap().values();
    let clean = relative_error(&m, &sys, &invert(&sys, &y).unwrap().coeffs, &f);
    let rms = (y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64).sqrt();
    let noise = Normal::new(0.0, 0.01 * rms).unwrap();
    let mut rng = seeded(7);
    let yn: Vec<Complex64> = y.iter().map(|z| z + noise.sample(&mut rng)).collect();
    let noisy = relative_error(&m, &sys, &invert(&sys, &yn).unwrap().coeffs, &f);
    AcceptanceRun { sigma_min: lo, condition: hi / lo, clean, noisy }
}

#[test]
fn acceptance_resolution_matches_baseline() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/acceptance_baseline.json")).unwrap();
    let base: serde_json::Value = serde_json::from_str(&text).unwrap();
    let get = |k: &str| base["inversion"][k].as_f64().unwrap();
    let r = acceptance_run();
    println!("sigma_min {:e}, condition {:.1}, clean {:e}, noisy {:e}", r.sigma_min, r.condition, r.clean, r.noisy);
    // Discrete injectivity.
    assert!(r.sigma_min >= 1e-3, "{}", r.sigma_min);
    assert!(r.clean <= 0.05);
    for (k, v) in [("sigma_min", r.sigma_min), ("condition", r.condition), ("clean_error", r.clean), ("noisy_error", r.noisy)] {
        assert!((v - get(k)).abs() <= 1e-3 * get(k), "{k}: {v} vs baseline {}", get(k));
    }
    assert!((r.noisy / r.clean - get("noise_ratio")).abs() <= 1e-2 * get("noise_ratio"));
}
