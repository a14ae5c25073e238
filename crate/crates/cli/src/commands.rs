//! Pipelines behind each scenario command.

use crate::report::{num, ReportBuilder};
use crate::scenario::*;
use carleman_core::boundary::{self, BoundaryCoefficients, SymbolFunction};
use carleman_core::carleman::{euclidean_weight, lcw_report, WeightSpec};
use carleman_core::cgo::{self, AdmissibleMetric, CgoAmplitude};
use carleman_core::geometry::Chart;
use carleman_core::rng::{in_ball, seeded};
use carleman_core::tolerance::TAU_ABS;
use carleman_core::transport::{self, build_fan, Fan, IndexConfig, SimpleManifold};
use carleman_core::xray::{self, JetMode, NodalGrid, SphereBundleFunction, TransformScalar, TransformSystem, Unknowns};
use carleman_core::{CExpr, Expr, OneFormField, ScalarField, Tolerance};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::f64::consts::PI;
use std::path::Path;

pub type Outcome = Result<(), String>;

fn core<T>(r: carleman_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn c64(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn run(s: &Scenario, rep: &mut ReportBuilder) -> Outcome {
    match &s.params {
        Params::CheckWeight(p) => check_weight(p, s.seed, rep),
        Params::CatalogVerify(p) => catalog_verify(p, s.seed, rep),
        Params::Geodesic(p) => geodesic(p, rep),
        Params::XrayForward(p) => xray_forward(p, rep),
        Params::XrayInvert(p) => xray_invert(p, s.seed, rep),
        Params::Pestov(p) => pestov(p, s.seed, rep),
        Params::Santalo(p) => santalo(p, rep),
        Params::CgoScan(p) => cgo_scan(p, rep),
        Params::BoundaryRecover(p) => boundary_recover(p, s.seed, rep),
        Params::GaugeCheck(p) => gauge_check(p, s.seed, rep),
    }
}

fn check_weight(p: &CheckWeight, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let n = p.metric.dim();
    let metric = core(p.metric.build(Chart::cube(n, p.chart_radius)))?;
    let phi = ScalarField::real(n, core(p.weight.expr())?);
    let points = match &p.points {
        Some(pts) => pts.clone(),
        None => {
            let mut rng = seeded(seed);
            match &p.weight {
                carleman_core::builders::ScalarSpec::Weight { weight } => {
                    let mut pts = Vec::with_capacity(p.samples);
                    while pts.len() < p.samples {
                        let x = in_ball(&mut rng, &vec![0.0; n], p.sample_radius);
                        if weight.is_regular(&x, 0.1 * p.sample_radius) {
                            pts.push(x);
                        }
                    }
                    pts
                }
                _ => (0..p.samples).map(|_| in_ball(&mut rng, &vec![0.0; n], p.sample_radius)).collect(),
            }
        }
    };
    let tol = Tolerance::with_rel(p.threshold).scaled(rep.tolerance_scale());
    let per_point: Vec<f64> = points
        .iter()
        .map(|x| core(lcw_report(&metric, &phi, std::slice::from_ref(x), p.directions, &tol)).map(|r| r.max_bracket))
        .collect::<Result<_, _>>()?;
    let total = core(lcw_report(&metric, &phi, &points, p.directions, &tol))?;
    rep.set("max_bracket", total.max_bracket);
    rep.set("worst_sample", &total.worst_sample);
    rep.set("points", points.len());
    rep.at_most("max_bracket", total.max_bracket, p.threshold);
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("max_bracket".into());
    let rows = points.iter().zip(&per_point).map(|(x, b)| x.iter().chain([b]).map(|v| num(*v)).collect());
    rep.csv("points.csv", &header.iter().map(String::as_str).collect::<Vec<_>>(), rows)
}

fn catalog_verify(p: &CatalogVerify, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let mut rng = seeded(seed);
    let metric = carleman_core::ChartMetric::euclidean(Chart::cube(p.dim, p.radius + 1.0));
    let tol = Tolerance::with_rel(p.threshold).scaled(rep.tolerance_scale());
    let mut rows = Vec::new();
    let mut families = serde_json::Map::new();
    for fam in &p.families {
        let mut worst = 0.0f64;
        let mut worst_spec: Option<WeightSpec> = None;
        for d in 0..p.draws {
            let spec = WeightSpec::random(&mut rng, *fam, p.dim);
            let w = core(euclidean_weight(&spec))?;
            let pts = spec.regular_points(&mut rng, p.points, p.radius, p.margin);
            let r = core(lcw_report(&metric, &w.field, &pts, p.directions, &tol))?;
            if r.max_bracket >= worst {
                worst = r.max_bracket;
                worst_spec = Some(spec.clone());
            }
            rows.push(vec![format!("{fam:?}"), d.to_string(), num(r.max_bracket)]);
        }
        families.insert(format!("{fam:?}"), json!({ "max_bracket": worst, "worst_spec": worst_spec }));
        rep.at_most(&format!("{fam:?}.max_bracket"), worst, p.threshold);
    }
    rep.set("families", families);
    rep.set("draws_per_family", p.draws);
    rep.set("points_per_draw", p.points);
    rep.set("directions", p.directions);
    rep.csv("draws.csv", &["family", "draw", "max_bracket"], rows)
}

fn geodesic(p: &Geodesic, rep: &mut ReportBuilder) -> Outcome {
    let m = core(p.manifold.build())?;
    let v = core(m.unit(&p.start, &p.direction))?;
    let path = core(transport::integrate_geodesic(&m, &p.start, &v, p.step))?;
    let speed = path
        .x
        .iter()
        .zip(&path.v)
        .map(|(x, v)| core(m.norm(x, v)).map(|s| (s - 1.0).abs()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let exit = path.exit_point();
    let conj = core(transport::conjugate_point_scan(&m, &path))?;
    let a = core(p.attenuation.field(2))?;
    let index = core(transport::index_min_eig(&m, &path, &a, &IndexConfig { grid: p.index_grid, ..IndexConfig::default() }))?;
    rep.set("tau", path.tau);
    rep.set("exit_point", exit);
    rep.set("exit_velocity", path.exit_velocity());
    rep.set("entered_at_boundary", path.entered_at_boundary);
    rep.set("conjugate_point", conj);
    rep.set("index_form", &index);
    rep.at_most("unit_speed_defect", speed, 1e-9);
    rep.at_most("exit_boundary_defect", m.beta_at(&exit).abs(), 1e-10);
    rep.csv("path.csv", &["t", "x1", "x2", "v1", "v2"], path.rows().into_iter().map(|r| r.iter().map(|v| num(*v)).collect()))
}

fn make_fan(m: &SimpleManifold, f: &FanParams) -> Result<Fan, String> {
    core(build_fan(m, f.boundary, f.angles, f.delta, f.step))
}

fn xray_forward(p: &XrayForward, rep: &mut ReportBuilder) -> Outcome {
    let m = core(p.manifold.build())?;
    let fan = make_fan(&m, &p.fan)?;
    let a = core(p.attenuation.field(2))?;
    let f = core(p.f.field(2))?;
    let form = p.form.as_ref().map(|s| core(s.field())).transpose()?;
    let y = core(xray::forward(&m, &a, &f, form.as_ref(), &fan))?;
    let l2 = (y.entries.iter().map(|e| e.value.norm_sqr()).sum::<f64>() * fan.boundary_weight * fan.angle_weight).sqrt();
    rep.set("rays", y.entries.len());
    rep.set("max_abs", y.max_abs());
    rep.set("l2_norm", l2);
    let finite = y.entries.iter().all(|e| e.value.re.is_finite() && e.value.im.is_finite());
    rep.at_most("non_finite_values", if finite { 0.0 } else { 1.0 }, 0.0);
    let rows = y.entries.iter().map(|e| {
        vec![
            e.boundary_index.to_string(),
            e.angle_index.to_string(),
            num(e.point[0]),
            num(e.point[1]),
            num(e.direction[0]),
            num(e.direction[1]),
            num(e.value.re),
            num(e.value.im),
        ]
    });
    rep.csv("measurements.csv", &["boundary_index", "angle_index", "x1", "x2", "d1", "d2", "re", "im"], rows)
}

/// Sidecar stored next to an XRTM cache: the build key and column layout.
#[derive(Serialize, Deserialize)]
struct CacheMeta {
    key: String,
    dofs: Vec<usize>,
    zero_rows: Vec<usize>,
}

fn cache_key(p: &XrayInvert) -> String {
    json!({ "manifold": p.manifold, "attenuation": p.attenuation, "grid": p.grid, "fan": p.fan }).to_string()
}

fn meta_path(cache: &Path) -> std::path::PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

fn load_or_build<T: TransformScalar>(
    p: &XrayInvert,
    m: &SimpleManifold,
    a: &ScalarField,
    fan: &Fan,
    grid: &NodalGrid,
    rep: &mut ReportBuilder,
) -> Result<TransformSystem<T>, String> {
    let key = cache_key(p);
    if let Some(cache) = &p.cache {
        let meta = std::fs::read_to_string(meta_path(cache)).ok().and_then(|t| serde_json::from_str::<CacheMeta>(&t).ok());
        if let (true, Some(meta)) = (cache.exists(), meta) {
            if meta.key == key {
                let matrix = core(xray::read_xrtm::<T>(cache))?;
                if matrix.nrows() != fan.rays.len() || matrix.ncols() != meta.dofs.len() {
                    return Err(format!("cache {} does not match the scenario dimensions", cache.display()));
                }
                rep.set("cache", "hit");
                return Ok(TransformSystem {
                    grid: grid.clone(),
                    dofs: meta.dofs,
                    unknowns: Unknowns::Function,
                    matrix,
                    regularization: p.regularization,
                    zero_rows: meta.zero_rows,
                });
            }
        }
    }
    let mut sys = core(xray::build_system::<T>(m, a, fan, grid, Unknowns::Function))?;
    sys.regularization = p.regularization;
    if let Some(cache) = &p.cache {
        core(sys.save_matrix(cache))?;
        let meta = CacheMeta { key, dofs: sys.dofs.clone(), zero_rows: sys.zero_rows.clone() };
        std::fs::write(meta_path(cache), serde_json::to_string(&meta).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        rep.set("cache", "written");
    } else {
        rep.set("cache", "none");
    }
    Ok(sys)
}

fn invert_with<T: TransformScalar>(p: &XrayInvert, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let m = core(p.manifold.build())?;
    let fan = make_fan(&m, &p.fan)?;
    let grid = core(NodalGrid::covering(&m, p.grid[0], p.grid[1]))?;
    let a = core(p.attenuation.field(2))?;
    let truth = core(p.truth.field(2))?;
    let sys = load_or_build::<T>(p, &m, &a, &fan, &grid, rep)?;
    let mut y = core(xray::forward(&m, &a, &truth, None, &fan))?.values();
    if p.noise > 0.0 {
        let rms = (y.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.len() as f64).sqrt();
        let normal = Normal::new(0.0, p.noise * rms).map_err(|e| e.to_string())?;
        let mut rng = seeded(seed);
        let complex = !p.attenuation.im.is_none() || !p.truth.im.is_none();
        for z in &mut y {
            z.re += normal.sample(&mut rng);
            if complex {
                z.im += normal.sample(&mut rng);
            }
        }
    }
    let inv = core(xray::invert(&sys, &y))?;
    let err = xray::relative_error(&m, &sys, &inv.coeffs, &truth);
    rep.set("rows", sys.matrix.nrows());
    rep.set("columns", sys.matrix.ncols());
    rep.set("zero_rows", sys.zero_rows.len());
    rep.set("rel_l2_error", err);
    rep.set("iterations", inv.iterations);
    rep.set("relative_residual", inv.relative_residual);
    rep.set("lambda", inv.lambda);
    if p.singular_values {
        let (lo, hi) = sys.singular_range();
        rep.set("sigma_min", lo);
        rep.set("sigma_max", hi);
        rep.set("condition_number", hi / lo);
    }
    rep.at_most("rel_l2_error", err, p.max_error);
    let rows: Vec<Vec<String>> = sys
        .dofs
        .iter()
        .zip(inv.coeffs.iter())
        .map(|(k, c)| {
            let x = grid.node(*k);
            let (r, t) = (c.to_c64(), truth.at(&x));
            vec![num(x[0]), num(x[1]), num(r.re), num(r.im), num(t.re), num(t.im)]
        })
        .collect();
    rep.csv("reconstruction.csv", &["x1", "x2", "re", "im", "truth_re", "truth_im"], rows)
}

fn xray_invert(p: &XrayInvert, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    if p.attenuation.im.is_none() && p.truth.im.is_none() {
        invert_with::<f64>(p, seed, rep)
    } else {
        invert_with::<Complex64>(p, seed, rep)
    }
}

fn pestov(p: &Pestov, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let m = core(p.manifold.build())?;
    let mode = match p.mode {
        PestovMode::Exact => JetMode::Exact,
        PestovMode::FiniteDifference { h } => JetMode::FiniteDifference(h),
    };
    let mut rng = seeded(seed);
    let mut rows = Vec::with_capacity(p.samples);
    let mut worst = 0.0f64;
    for _ in 0..p.samples {
        let u = SphereBundleFunction::random(&mut rng, p.complex);
        let x = in_ball(&mut rng, &m.center, p.sample_radius);
        if !m.contains(&x) {
            return Err(format!("sample point {x:?} lies outside the manifold; reduce sample_radius"));
        }
        let z = rng.random_range(0.0..2.0 * PI);
        let t = core(xray::pestov_terms(&m.metric, &u, &x, z, mode))?;
        let normalized = t.residual() / (TAU_ABS + p.threshold * t.scale());
        worst = worst.max(normalized);
        rows.push(vec![num(x[0]), num(x[1]), num(z), num(t.residual()), num(t.scale())]);
    }
    rep.set("samples", p.samples);
    rep.set("max_normalized_residual", worst);
    rep.at_most("max_normalized_residual", worst, 1.0);
    rep.csv("samples.csv", &["x1", "x2", "zeta", "residual", "scale"], rows)
}

fn santalo(p: &Santalo, rep: &mut ReportBuilder) -> Outcome {
    let m = core(p.manifold.build())?;
    let fan = make_fan(&m, &p.fan)?;
    let v = SphereBundleFunction::new(core(p.v.field(3))?.value);
    let q = xray::SmQuadrature { radial: p.quadrature.radial, angular: p.quadrature.angular, fibre: p.quadrature.fibre };
    let r = core(xray::santalo_residual(&m, &v, &fan, &q))?;
    let rel = (r.lhs - r.rhs).norm() / r.lhs.norm().max(r.rhs.norm()).max(TAU_ABS);
    rep.set("lhs", c64(r.lhs));
    rep.set("rhs", c64(r.rhs));
    rep.set("relative_residual", rel);
    rep.at_most("relative_residual", rel, p.threshold);
    rep.csv(
        "santalo.csv",
        &["side", "re", "im"],
        [vec!["sm_integral".into(), num(r.lhs.re), num(r.lhs.im)], vec!["fan_integral".into(), num(r.rhs.re), num(r.rhs.im)]],
    )
}

fn fourier(modes: &[FourierMode]) -> CExpr {
    let t = Expr::var(0);
    let mut re = Expr::zero();
    let mut im = Expr::zero();
    for md in modes {
        let arg = t.clone() * md.k as f64;
        re = re + md.re * arg.cos() - md.im * arg.sin();
        im = im + md.re * arg.sin() + md.im * arg.cos();
    }
    CExpr::new(re, im)
}

fn cgo_scan(p: &CgoScan, rep: &mut ReportBuilder) -> Outcome {
    let mut am = core(AdmissibleMetric::new(core(p.c.expr())?, p.curvature, p.omega, p.radius))?;
    if let Some([lo, hi]) = p.x1_range {
        am = am.with_x1_range(lo, hi);
    }
    let amp = CgoAmplitude::new(p.amplitude.expr(), fourier(&p.b));
    let q = core(p.q.field(3))?.value;
    let scan = core(cgo::residual_scan(&am, &q, &amp, 1.0, &p.h, &p.grid))?;
    let eik = core(cgo::eikonal_residual(&am, 1.0, &p.grid))?;
    let tr = core(cgo::transport_residual(&am, &amp, &p.grid))?;
    rep.set("scan", &scan);
    rep.set("eikonal", &eik);
    rep.set("transport", &tr);
    rep.within("slope", scan.slope, p.slope_range[0], p.slope_range[1]);
    rep.at_most("eikonal_max", eik.max, p.eikonal_max);
    rep.at_most("transport_relative", tr.residual / tr.scale.max(TAU_ABS), p.transport_rel);
    if let Some(mg) = &p.magnetic {
        let a: OneFormField = core(mg.form.field())?;
        let base = core(cgo::transport_residual(&am, &amp, &mg.grid))?;
        let phase = core(cgo::magnetic_phase(&am, &a, &mg.grid))?;
        let phi_res = phase.residual;
        let mag = core(cgo::transport_residual(&am, &amp.clone().with_phase(phase), &mg.grid))?;
        let rel = mag.residual / mag.amplitude_scale;
        let floor = base.residual / base.amplitude_scale;
        rep.set("magnetic", json!({ "phi_residual": phi_res, "transport_relative": rel, "non_magnetic_relative": floor }));
        rep.at_most("magnetic_transport_relative", rel, 2.0 * phi_res + floor);
    }
    let rows = scan.h.iter().zip(&scan.norms).map(|(h, v)| vec![num(*h), num(*v), num(v / (h * h))]);
    rep.csv("scan.csv", &["h", "residual_norm", "normalized"], rows)
}

fn build_coefficients(spec: &BoundarySpec, seed: u64) -> Result<BoundaryCoefficients, String> {
    match spec {
        BoundarySpec::Flat { dim, q } => core(BoundaryCoefficients::flat(*dim, Complex64::new(q[0], q[1]))),
        BoundarySpec::Random { dim } => core(BoundaryCoefficients::random_normalized(&mut seeded(seed), *dim)),
        BoundarySpec::Custom { dim, metric, form, potential } => {
            let nt = dim - 1;
            let mut g: Vec<Vec<Expr>> =
                (0..nt).map(|i| (0..nt).map(|j| Expr::c(if i == j { 1.0 } else { 0.0 })).collect()).collect();
            for (i, j, poly) in metric {
                let e = poly.expr();
                g[*i][*j] = g[*i][*j].clone() + e.clone();
                if i != j {
                    g[*j][*i] = g[*j][*i].clone() + e;
                }
            }
            let a = match form {
                Some(comps) => OneFormField {
                    comps: comps.iter().map(|c| core(c.field(*dim)).map(|f| f.value)).collect::<Result<_, _>>()?,
                },
                None => OneFormField::zero(*dim),
            };
            let q = core(potential.field(*dim))?;
            core(BoundaryCoefficients::new(g, a, q))
        }
    }
}

fn boundary_recover(p: &BoundaryRecover, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let bc = build_coefficients(&p.coefficients, seed)?;
    let n = bc.dim;
    let points = p.points.clone().unwrap_or_else(|| vec![bc.centre()]);
    if points.iter().any(|x| x.len() != n - 1) {
        return Err(format!("boundary points need {} coordinates", n - 1));
    }
    let s: Vec<SymbolFunction> = core([1, 0, -1].iter().map(|&l| boundary::symbol_b(&bc, l)).collect())?;
    let mut worst = 0.0f64;
    let mut defect = 0.0f64;
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (i, xp) in points.iter().enumerate() {
        let rec = core(boundary::recover(&s[0], &s[1], &s[2], n, xp))?;
        let truth = core(boundary::direct_jets(&bc, xp))?;
        let cmp = boundary::compare(&rec, &truth);
        worst = worst.max(cmp.max_relative);
        defect = defect.max(rec.consistency_defect());
        for (k, v) in &cmp.fields {
            rows.push(vec![i.to_string(), k.clone(), num(*v)]);
        }
        results.push(json!({ "x": xp, "recovered": rec, "comparison": cmp }));
    }
    rep.set("points", results);
    rep.set("max_relative", worst);
    rep.set("consistency_defect", defect);
    rep.at_most("max_relative", worst, p.threshold);
    rep.csv("jets.csv", &["point", "field", "relative_error"], rows)
}

fn random_expr<R: Rng>(rng: &mut R, n: usize, amp: f64) -> Expr {
    let x = Expr::coords(n);
    let mut l = Expr::c(rng.random_range(-1.0..1.0));
    for xi in &x {
        l = l + xi.clone() * rng.random_range(-1.0..1.0);
    }
    (l.sin() + x[0].clone() * x[n - 1].clone() * rng.random_range(-1.0..1.0)) * amp
}

fn gauge_check(p: &GaugeCheck, seed: u64, rep: &mut ReportBuilder) -> Outcome {
    let mut rng = seeded(seed);
    let bc = build_coefficients(&p.coefficients, rng.random())?;
    let n = bc.dim;
    let mut worst = 0.0f64;
    let mut rows = Vec::with_capacity(p.draws);
    for d in 0..p.draws {
        let cf = ScalarField::real(n, random_expr(&mut rng, n, 0.4).exp());
        let psi = ScalarField::complex(n, CExpr::new(random_expr(&mut rng, n, 1.0), random_expr(&mut rng, n, 0.2)));
        let u = ScalarField::complex(n, CExpr::new(random_expr(&mut rng, n, 1.0), random_expr(&mut rng, n, 1.0)));
        let mut x: Vec<f64> = (0..n - 1).map(|a| rng.random_range(0.8 * bc.lo[a]..0.8 * bc.hi[a])).collect();
        x.push(rng.random_range(0.1 * bc.depth..0.9 * bc.depth));
        let r = core(boundary::gauge_identity_residual(&bc, &cf, &psi, &u, &x))?;
        let normalized = r.res_conformal.max(r.res_gauge) / (TAU_ABS + p.threshold * r.scale);
        worst = worst.max(normalized);
        rows.push(vec![d.to_string(), num(r.res_conformal), num(r.res_gauge), num(r.scale)]);
    }
    rep.set("draws", p.draws);
    rep.set("max_normalized_residual", worst);
    rep.at_most("max_normalized_residual", worst, 1.0);
    rep.csv("draws.csv", &["draw", "res_conformal", "res_gauge", "scale"], rows)
}
