//! Limiting Carleman weight checks.
//!
//! For a real weight φ the conjugated Laplacian has principal symbol
//! `p = a + i b` with `a = |ξ|² − |dφ|²` and `b = 2⟨ξ, dφ⟩`. φ is a limiting
//! Carleman weight when `{a, b} = 0` on the characteristic set `a = b = 0`.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{grad_hessian, ChartMetric, HessianReport, MetricJets, ScalarField, DIFFERENTIAL_FLOOR};
use crate::jet::{Jet, Real};
use crate::tolerance::Tolerance;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A point of the cotangent bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotangentSample {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

/// How [`bracket`] evaluates `{a, b}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BracketMethod {
    /// `4 D²φ(ξ♯, ξ♯) + 4 D²φ(∇φ, ∇φ)`.
    Formula,
    /// Hamilton's equations with jets in x and exact ξ-derivatives.
    Direct,
}

fn real_jet(phi: &ScalarField, x: &[f64], order: usize) -> Result<Jet> {
    Ok(phi.real_part()?.jet(x, order))
}

fn quad(m: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    u.dot(&(m * v))
}

/// `p = |ξ|² − |dφ|² + 2i⟨ξ, dφ⟩` with the co-metric.
pub fn symbol_p(metric: &ChartMetric, phi: &ScalarField, s: &CotangentSample) -> Result<Complex64> {
    metric.chart.require_interior(&s.x)?;
    let n = metric.dim();
    let j = real_jet(phi, &s.x, 1)?;
    let ginv = metric.inverse(&s.x)?;
    let d = DVector::from_fn(n, |i, _| j.d(i));
    let xi = DVector::from_column_slice(&s.xi);
    Ok(Complex64::new(quad(&ginv, &xi, &xi) - quad(&ginv, &d, &d), 2.0 * quad(&ginv, &xi, &d)))
}

/// Bracket value plus the magnitude of the compared terms.
#[derive(Clone, Copy, Debug)]
pub struct BracketValue {
    pub value: f64,
    pub scale: f64,
}

fn formula_from_report(ginv: &DMatrix<f64>, rep: &HessianReport, xi: &[f64]) -> BracketValue {
    let xs = ginv * DVector::from_column_slice(xi);
    let gr = DVector::from_column_slice(&rep.gradient);
    let t1 = 4.0 * quad(&rep.hessian, &xs, &xs);
    let t2 = 4.0 * quad(&rep.hessian, &gr, &gr);
    BracketValue { value: t1 + t2, scale: t1.abs().max(t2.abs()) }
}

/// `{a, b}` from metric jets (order ≥ 1) and jets of dφ (order ≥ 1).
pub fn direct_bracket_jets(mj: &MetricJets, dphi: &[Jet], xi: &[f64]) -> BracketValue {
    let n = mj.n;
    let zero = dphi[0].cst(0.0);
    let mut a = zero.clone();
    let mut b = zero.clone();
    for j in 0..n {
        for k in 0..n {
            let gi = &mj.ginv[j * n + k];
            a = a + gi.clone() * (xi[j] * xi[k]) - gi.clone() * dphi[j].clone() * dphi[k].clone();
            b = b + gi.clone() * dphi[k].clone() * (2.0 * xi[j]);
        }
    }
    let ginv = DMatrix::from_fn(n, n, |j, k| mj.ginv[j * n + k].value());
    let xv = DVector::from_column_slice(xi);
    let dv = DVector::from_fn(n, |i, _| dphi[i].value());
    let a_xi = &ginv * &xv * 2.0;
    let b_xi = &ginv * &dv * 2.0;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for i in 0..n {
        t1 += a_xi[i] * b.d(i);
        t2 += a.d(i) * b_xi[i];
    }
    BracketValue { value: t1 - t2, scale: t1.abs().max(t2.abs()) }
}

/// The Poisson bracket `{a, b}` at a cotangent sample.
pub fn bracket_value(
    metric: &ChartMetric,
    phi: &ScalarField,
    s: &CotangentSample,
    method: BracketMethod,
) -> Result<BracketValue> {
    let rep = grad_hessian(metric, phi, &s.x)?;
    let ginv = metric.inverse(&s.x)?;
    let g2 = quad(&metric.value(&s.x)?, &DVector::from_column_slice(&rep.gradient), &DVector::from_column_slice(&rep.gradient));
    if g2.sqrt() <= DIFFERENTIAL_FLOOR {
        return Err(Error::VanishingDifferential(s.x.clone()));
    }
    match method {
        BracketMethod::Formula => Ok(formula_from_report(&ginv, &rep, &s.xi)),
        BracketMethod::Direct => {
            let n = metric.dim();
            let mj = metric.jets(&s.x, 2)?;
            let j = real_jet(phi, &s.x, 2)?;
            let d: Vec<Jet> = (0..n).map(|i| j.diff(i)).collect();
            Ok(direct_bracket_jets(&mj, &d, &s.xi))
        }
    }
}

pub fn bracket(metric: &ChartMetric, phi: &ScalarField, s: &CotangentSample, method: BracketMethod) -> Result<f64> {
    bracket_value(metric, phi, s, method).map(|b| b.value)
}

/// Orthonormal basis of covectors under the co-metric, the first element along `first`.
fn cometric_basis(ginv: &DMatrix<f64>, first: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = ginv.nrows();
    let ip = |u: &DVector<f64>, v: &DVector<f64>| quad(ginv, u, v);
    let mut basis: Vec<DVector<f64>> = vec![first / ip(first, first).sqrt()];
    for e in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::from_fn(n, |i, _| if i == e { 1.0 } else { 0.0 });
        for _ in 0..2 {
            for b in &basis {
                let c = ip(&v, b);
                v -= b * c;
            }
        }
        let nv = ip(&v, &v).sqrt();
        if nv > 1e-6 {
            basis.push(v / nv);
        }
    }
    basis
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_9;

/// Deterministic low-discrepancy points on `S^{d-1}` (`d ≥ 1`).
pub fn sphere_sweep(d: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let shift = (seed as f64 * GOLDEN_FRACTION).fract();
    match d {
        1 => (0..k).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..k)
            .map(|i| {
                let t = (i as f64 + shift) * GOLDEN_ANGLE;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => (0..k)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let t = (i as f64 + shift) * GOLDEN_ANGLE;
                vec![r * t.cos(), r * t.sin(), z]
            })
            .collect(),
        _ => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..k).map(|_| crate::rng::on_sphere(&mut rng, d)).collect()
        }
    }
}

/// Covectors with `|ξ| = |dφ|` and `⟨ξ, dφ⟩ = 0`, swept over the (n−2)-sphere.
pub fn characteristic_samples_seeded(
    metric: &ChartMetric,
    phi: &ScalarField,
    x: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<CotangentSample>> {
    let n = metric.dim();
    if n < 2 {
        return Err(Error::Dimension("characteristic set needs n >= 2".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParameters("need at least one sample".into()));
    }
    metric.chart.require_interior(x)?;
    let j = real_jet(phi, x, 1)?;
    let ginv = metric.inverse(x)?;
    let d = DVector::from_fn(n, |i, _| j.d(i));
    let dn = quad(&ginv, &d, &d).sqrt();
    if dn <= DIFFERENTIAL_FLOOR {
        return Err(Error::VanishingDifferential(x.to_vec()));
    }
    let basis = cometric_basis(&ginv, &d);
    Ok(sphere_sweep(n - 1, k, seed)
        .into_iter()
        .map(|s| {
            let mut xi = DVector::zeros(n);
            for (c, b) in s.iter().zip(&basis[1..]) {
                xi += b * (dn * c);
            }
            CotangentSample { x: x.to_vec(), xi: xi.iter().copied().collect() }
        })
        .collect())
}

pub fn characteristic_samples(
    metric: &ChartMetric,
    phi: &ScalarField,
    x: &[f64],
    k: usize,
) -> Result<Vec<CotangentSample>> {
    characteristic_samples_seeded(metric, phi, x, k, 0)
}

/// Outcome of [`lcw_report`].
#[derive(Clone, Debug, Serialize)]
pub struct LcwReport {
    /// Max of `|{a,b}| / |∇φ|⁴` over the sampled characteristic set.
    pub max_bracket: f64,
    pub worst_sample: CotangentSample,
    pub is_lcw: bool,
}

/// Evaluates the normalized bracket on `k` characteristic covectors per point.
pub fn lcw_report(
    metric: &ChartMetric,
    phi: &ScalarField,
    points: &[Vec<f64>],
    k: usize,
    tol: &Tolerance,
) -> Result<LcwReport> {
    if points.is_empty() {
        return Err(Error::InvalidParameters("no sample points".into()));
    }
    let per_point: Vec<Result<(f64, CotangentSample, bool)>> = points
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let rep = grad_hessian(metric, phi, x)?;
            let ginv = metric.inverse(x)?;
            let g = metric.value(x)?;
            let gr = DVector::from_column_slice(&rep.gradient);
            let g4 = quad(&g, &gr, &gr).powi(2);
            let mut worst = (f64::NEG_INFINITY, None, true);
            for s in characteristic_samples_seeded(metric, phi, x, k, idx as u64)? {
                let b = formula_from_report(&ginv, &rep, &s.xi);
                let v = b.value.abs() / g4;
                let ok = tol.accepts(v, b.scale / g4);
                if v > worst.0 {
                    worst = (v, Some(s), worst.2 && ok);
                } else {
                    worst.2 &= ok;
                }
            }
            Ok((worst.0, worst.1.expect("k >= 1"), worst.2))
        })
        .collect();
    let mut out: Option<LcwReport> = None;
    for r in per_point {
        let (v, s, ok) = r?;
        match &mut out {
            None => out = Some(LcwReport { max_bracket: v, worst_sample: s, is_lcw: ok }),
            Some(o) => {
                o.is_lcw &= ok;
                if v > o.max_bracket {
                    o.max_bracket = v;
                    o.worst_sample = s;
                }
            }
        }
    }
    Ok(out.expect("points nonempty"))
}

/// Families of the Euclidean weight catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightFamily {
    Linear,
    ArgPlane,
    Log,
    InvLinear,
    ArgSphere,
    LogRatio,
}

impl WeightFamily {
    pub const ALL: [WeightFamily; 6] = [
        WeightFamily::Linear,
        WeightFamily::ArgPlane,
        WeightFamily::Log,
        WeightFamily::InvLinear,
        WeightFamily::ArgSphere,
        WeightFamily::LogRatio,
    ];
}

/// `φ(x) = a φ₀(x − x₀) + b` for a catalog family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub family: WeightFamily,
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normv(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

/// Distance below which a point counts as lying on an excluded set.
pub const DOMAIN_GUARD: f64 = 1e-8;

/// Validity domain of a catalog weight.
#[derive(Clone, Debug)]
pub struct WeightDomain {
    spec: WeightSpec,
}

impl WeightDomain {
    /// True when `x` is at least [`DOMAIN_GUARD`] away from the excluded set.
    pub fn contains(&self, x: &[f64]) -> bool {
        let s = &self.spec;
        if x.len() != s.x0.len() {
            return false;
        }
        let y: Vec<f64> = x.iter().zip(&s.x0).map(|(a, b)| a - b).collect();
        let g = DOMAIN_GUARD;
        match s.family {
            WeightFamily::Linear => true,
            WeightFamily::Log | WeightFamily::InvLinear => normv(&y) > g,
            WeightFamily::LogRatio => {
                let xi = s.xi.as_ref().expect("validated");
                let p: Vec<f64> = y.iter().zip(xi).map(|(a, b)| a + b).collect();
                let m: Vec<f64> = y.iter().zip(xi).map(|(a, b)| a - b).collect();
                normv(&p) > g && normv(&m) > g
            }
            WeightFamily::ArgPlane => {
                let re = dotv(&y, s.omega1.as_ref().expect("validated"));
                let im = dotv(&y, s.omega2.as_ref().expect("validated"));
                let dist = if re <= 0.0 { im.abs() } else { re.hypot(im) };
                dist > g
            }
            WeightFamily::ArgSphere => {
                let xi = s.xi.as_ref().expect("validated");
                let theta = s.theta.expect("validated");
                let xn = normv(xi);
                let t = dotv(&y, xi) / xn; // signed distance to the hyperplane ⟨y,ξ⟩ = 0
                let ry = normv(&y);
                if theta == 0.0 {
                    !(t.abs() < g && ry <= xn + g)
                } else if theta == PI {
                    !(t.abs() < g && ry >= xn - g)
                } else {
                    let cot = theta.cos() / theta.sin();
                    let c: Vec<f64> = y.iter().zip(xi).map(|(a, b)| a + cot * b).collect();
                    let radius = xn / theta.sin().abs();
                    let on_sphere = (normv(&c) - radius).abs() < g;
                    let side = if theta < PI { t >= -g } else { t <= g };
                    !(on_sphere && side)
                }
            }
        }
    }
}

/// A catalog weight with its validity domain.
#[derive(Clone, Debug)]
pub struct EuclideanWeight {
    pub field: ScalarField,
    pub domain: WeightDomain,
}

impl EuclideanWeight {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        Ok(self.field.value.re.at(x))
    }
}

/// `arg z = 2 arctan(Im z / (|z| + Re z))`.
pub fn arg_expr(re: &Expr, im: &Expr) -> Expr {
    let modulus = (re.sq() + im.sq()).sqrt();
    im.clone().atan2(&(modulus + re.clone())) * 2.0
}

fn cvec(v: &[f64]) -> Vec<Expr> {
    v.iter().map(|c| Expr::c(*c)).collect()
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        let bad = |m: &str| Err(Error::InvalidParameters(m.to_string()));
        if n < 2 {
            return bad("weights need n >= 2");
        }
        if !(self.a != 0.0 && self.a.is_finite()) {
            return bad("a must be nonzero");
        }
        let need_xi = matches!(
            self.family,
            WeightFamily::Linear | WeightFamily::InvLinear | WeightFamily::ArgSphere | WeightFamily::LogRatio
        );
        if need_xi {
            match &self.xi {
                Some(xi) if xi.len() == n && normv(xi) > 0.0 => {}
                _ => return bad("xi must be a nonzero vector of matching dimension"),
            }
        }
        if self.family == WeightFamily::ArgPlane {
            match (&self.omega1, &self.omega2) {
                (Some(w1), Some(w2)) if w1.len() == n && w2.len() == n => {
                    if (normv(w1) - 1.0).abs() > 1e-12 || (normv(w2) - 1.0).abs() > 1e-12 || dotv(w1, w2).abs() > 1e-12 {
                        return bad("omega1, omega2 must be orthonormal");
                    }
                }
                _ => return bad("omega1 and omega2 are required"),
            }
        }
        if self.family == WeightFamily::ArgSphere {
            match self.theta {
                Some(t) if (0.0..2.0 * PI).contains(&t) => {}
                _ => return bad("theta must lie in [0, 2pi)"),
            }
        }
        Ok(())
    }

    /// The unshifted, unscaled model weight `φ₀(y)`.
    pub fn model_expr(&self, y: &[Expr]) -> Expr {
        match self.family {
            WeightFamily::Linear => Expr::dot(y, &cvec(self.xi.as_ref().unwrap())),
            WeightFamily::ArgPlane => {
                let re = Expr::dot(y, &cvec(self.omega1.as_ref().unwrap()));
                let im = Expr::dot(y, &cvec(self.omega2.as_ref().unwrap()));
                arg_expr(&re, &im)
            }
            WeightFamily::Log => Expr::dot(y, y).ln() * 0.5,
            WeightFamily::InvLinear => Expr::dot(y, &cvec(self.xi.as_ref().unwrap())) / Expr::dot(y, y),
            WeightFamily::ArgSphere => {
                let xi = self.xi.as_ref().unwrap();
                let th = self.theta.unwrap();
                let p = Expr::dot(y, y) - dotv(xi, xi);
                let q = Expr::dot(y, &cvec(xi)) * 2.0;
                let re = p.clone() * th.cos() - q.clone() * th.sin();
                let im = p * th.sin() + q * th.cos();
                arg_expr(&re, &im)
            }
            WeightFamily::LogRatio => {
                let xi = self.xi.as_ref().unwrap();
                let plus: Vec<Expr> = y.iter().zip(xi).map(|(a, b)| a.clone() + *b).collect();
                let minus: Vec<Expr> = y.iter().zip(xi).map(|(a, b)| a.clone() - *b).collect();
                Expr::dot(&plus, &plus).ln() - Expr::dot(&minus, &minus).ln()
            }
        }
    }
}

/// Builds `φ = a φ₀(x − x₀) + b` and its domain predicate.
pub fn euclidean_weight(spec: &WeightSpec) -> Result<EuclideanWeight> {
    spec.validate()?;
    let n = spec.x0.len();
    let y: Vec<Expr> = Expr::coords(n).into_iter().zip(&spec.x0).map(|(x, c)| x - *c).collect();
    let phi = spec.model_expr(&y) * spec.a + spec.b;
    Ok(EuclideanWeight { field: ScalarField::real(n, phi), domain: WeightDomain { spec: spec.clone() } })
}

/// Max deviation of the convexified bracket from its closed form.
///
/// With `f(s) = s + (h/2ε) s²` the conjugation by `f∘φ` of a distance-normalized
/// weight has `{ã, b̃} = 4 f'' f'² |∇φ|⁴ + 4 f'' ⟨∇φ, ξ♯⟩²`.
pub fn convexified_bracket_check(
    metric: &ChartMetric,
    phi: &ScalarField,
    eps: f64,
    h: f64,
    samples: &[CotangentSample],
    tol: &Tolerance,
) -> Result<f64> {
    if !(eps > 0.0) || !(h >= 0.0 && h / eps < 1.0) {
        return Err(Error::InvalidParameters("need eps > 0 and 0 <= h/eps < 1".into()));
    }
    let c = h / eps;
    let n = metric.dim();
    let mut worst = 0.0f64;
    for s in samples {
        let mj = metric.jets(&s.x, 2)?;
        let j = real_jet(phi, &s.x, 2)?;
        let ginv = metric.inverse(&s.x)?;
        let d = DVector::from_fn(n, |i, _| j.d(i));
        let grad2 = quad(&ginv, &d, &d);
        if !tol.accepts(grad2.sqrt() - 1.0, 1.0) {
            return Err(Error::NotNormalized(format!("|grad phi| = {} at {:?}", grad2.sqrt(), s.x)));
        }
        let f = j.clone() + j.clone() * j.clone() * (0.5 * c);
        let df: Vec<Jet> = (0..n).map(|i| f.diff(i)).collect();
        let direct = direct_bracket_jets(&mj, &df, &s.xi).value;
        let phi0 = j.value();
        let fp = 1.0 + c * phi0;
        let fpp = c;
        let xs = quad(&ginv, &d, &DVector::from_column_slice(&s.xi));
        let expect = 4.0 * fpp * fp * fp * grad2 * grad2 + 4.0 * fpp * xs * xs;
        worst = worst.max((direct - expect).abs());
    }
    Ok(worst)
}

fn arg_clear(re: f64, im: f64, margin: f64) -> bool {
    re.hypot(im) > margin && !(re < 0.0 && im.abs() < margin * re.abs())
}

impl WeightSpec {
    /// Random member of `family` in `ℝⁿ` with `|a| ∈ [0.5, 2)`, `|x₀| < 0.5`
    /// and `|ξ| ∈ [0.5, 1.5)`.
    pub fn random<R: rand::Rng>(rng: &mut R, family: WeightFamily, n: usize) -> WeightSpec {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut spec = WeightSpec {
            family,
            a: sign * rng.random_range(0.5..2.0),
            b: rng.random_range(-1.0..1.0),
            x0: crate::rng::in_ball(rng, &vec![0.0; n], 0.5),
            xi: None,
            omega1: None,
            omega2: None,
            theta: None,
        };
        let xi: Vec<f64> = crate::rng::on_sphere(rng, n).iter().map(|v| v * rng.random_range(0.5..1.5)).collect();
        match family {
            WeightFamily::ArgPlane => {
                let w1 = crate::rng::on_sphere(rng, n);
                let mut w2 = crate::rng::on_sphere(rng, n);
                let c = dotv(&w1, &w2);
                for (a, b) in w2.iter_mut().zip(&w1) {
                    *a -= c * b;
                }
                let m = normv(&w2);
                spec.omega1 = Some(w1);
                spec.omega2 = Some(w2.iter().map(|v| v / m).collect());
            }
            WeightFamily::ArgSphere => {
                spec.xi = Some(xi);
                spec.theta = Some(rng.random_range(0.0..2.0 * PI));
            }
            WeightFamily::Log => {}
            _ => spec.xi = Some(xi),
        }
        spec
    }

    /// Whether `x` keeps a margin from the singular set and the branch cut,
    /// measured on the quantities whose vanishing defines them.
    pub fn is_regular(&self, x: &[f64], margin: f64) -> bool {
        let y: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        match self.family {
            WeightFamily::Linear => true,
            WeightFamily::Log | WeightFamily::InvLinear => normv(&y) > margin,
            WeightFamily::LogRatio => {
                let Some(xi) = self.xi.as_ref() else { return false };
                let p: Vec<f64> = y.iter().zip(xi).map(|(a, b)| a + b).collect();
                let m: Vec<f64> = y.iter().zip(xi).map(|(a, b)| a - b).collect();
                normv(&p) > margin && normv(&m) > margin
            }
            WeightFamily::ArgPlane => match (&self.omega1, &self.omega2) {
                (Some(w1), Some(w2)) => arg_clear(dotv(&y, w1), dotv(&y, w2), margin),
                _ => false,
            },
            WeightFamily::ArgSphere => {
                let (Some(xi), Some(th)) = (self.xi.as_ref(), self.theta) else { return false };
                let p = dotv(&y, &y) - dotv(xi, xi);
                let q = 2.0 * dotv(&y, xi);
                arg_clear(p * th.cos() - q * th.sin(), p * th.sin() + q * th.cos(), margin)
            }
        }
    }

    /// `count` regular points drawn uniformly from `[-r, r]ⁿ` by rejection.
    pub fn regular_points<R: rand::Rng>(&self, rng: &mut R, count: usize, r: f64, margin: f64) -> Vec<Vec<f64>> {
        let n = self.x0.len();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
            if self.is_regular(&x, margin) {
                out.push(x);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Chart;

    fn e(n: usize) -> ChartMetric {
        ChartMetric::euclidean(Chart::cube(n, 10.0))
    }

    #[test]
    fn symbol_at_characteristic_point() {
        let x = Expr::coords(3);
        let phi = ScalarField::real(3, x[0].clone());
        let s = CotangentSample { x: vec![0.1, 0.2, 0.3], xi: vec![0.0, 1.0, 0.0] };
        assert_eq!(symbol_p(&e(3), &phi, &s).unwrap(), Complex64::new(0.0, 0.0));
        let s = CotangentSample { xi: vec![1.0, 0.0, 0.0], ..s };
        assert_eq!(symbol_p(&e(3), &phi, &s).unwrap(), Complex64::new(0.0, 2.0));
    }

    #[test]
    fn planar_samples_alternate() {
        let x = Expr::coords(2);
        let phi = ScalarField::real(2, x[0].clone());
        let s = characteristic_samples(&e(2), &phi, &[0.0, 0.0], 4).unwrap();
        let ys: Vec<f64> = s.iter().map(|c| c.xi[1]).collect();
        assert_eq!(ys, vec![1.0, -1.0, 1.0, -1.0]);
        assert!(s.iter().all(|c| c.xi[0] == 0.0));
    }

    #[test]
    fn log_bracket_vanishes_on_characteristic_example() {
        let x = Expr::coords(3);
        let phi = ScalarField::real(3, Expr::dot(&x, &x).ln() * 0.5);
        let s = CotangentSample { x: vec![1.0, 0.0, 0.0], xi: vec![0.0, 1.0, 0.0] };
        let f = bracket(&e(3), &phi, &s, BracketMethod::Formula).unwrap();
        assert!(f.abs() < 1e-14);
    }

    #[test]
    fn arg_plane_at_i() {
        let spec = WeightSpec {
            family: WeightFamily::ArgPlane,
            a: 1.0,
            b: 0.0,
            x0: vec![0.0; 3],
            xi: None,
            omega1: Some(vec![1.0, 0.0, 0.0]),
            omega2: Some(vec![0.0, 1.0, 0.0]),
            theta: None,
        };
        let w = euclidean_weight(&spec).unwrap();
        assert!((w.eval(&[0.0, 1.0, 0.0]).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(w.eval(&[-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn log_ratio_direct_substitution() {
        let spec = WeightSpec {
            family: WeightFamily::LogRatio,
            a: 1.0,
            b: 0.0,
            x0: vec![0.0; 3],
            xi: Some(vec![1.0, 0.0, 0.0]),
            omega1: None,
            omega2: None,
            theta: None,
        };
        let w = euclidean_weight(&spec).unwrap();
        assert!((w.eval(&[3.0, 0.0, 0.0]).unwrap() - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = WeightSpec {
            family: WeightFamily::Linear,
            a: 0.0,
            b: 0.0,
            x0: vec![0.0; 3],
            xi: Some(vec![1.0, 0.0, 0.0]),
            omega1: None,
            omega2: None,
            theta: None,
        };
        assert!(euclidean_weight(&spec).is_err());
    }
}
