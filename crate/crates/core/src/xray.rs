//! Attenuated geodesic ray transform on surfaces.
//!
//! `I^a F(x, ξ) = ∫₀^τ F(γ(t), γ̇(t)) exp(∫₀ᵗ a(γ(s)) ds) dt` for
//! `F(x, ξ) = f(x) + α_i(x) ξ^i`, together with the Pestov identity, Santaló's
//! formula, a dense discretization and its regularized inversion.

use crate::error::{Error, Result};
use crate::expr::{CExpr, Expr};
use crate::geometry::{curvature, idx4, invert_jets, ChartMetric, MetricJets, OneFormField, ScalarField};
use crate::jet::{Jet, Real};
use crate::linalg;
use crate::transport::{boundary_point, boundary_radius, Fan, GeodesicPath, SimpleManifold};
use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

/// Function on the unit circle bundle of a surface, `u(x₁, x₂, ζ)` with
/// `ξ(ζ) = cos ζ e₁ + sin ζ e₂` in the Cholesky-orthonormal frame of `g(x)`.
#[derive(Clone, Debug)]
pub struct SphereBundleFunction {
    /// Expression in the variables `(x₁, x₂, ζ)`.
    pub value: CExpr,
}

impl SphereBundleFunction {
    pub fn new(value: CExpr) -> SphereBundleFunction {
        SphereBundleFunction { value }
    }

    pub fn real(e: Expr) -> SphereBundleFunction {
        SphereBundleFunction { value: CExpr::real(e) }
    }

    /// Lift of a function on M (independent of ζ).
    pub fn from_base(f: &ScalarField) -> SphereBundleFunction {
        SphereBundleFunction { value: f.value.clone() }
    }

    pub fn at(&self, x: &[f64], zeta: f64) -> Complex64 {
        self.value.at(&[x[0], x[1], zeta])
    }

    /// Random trigonometric polynomial of fibre degree 2 with coefficients
    /// affine in `x`, times a random exponential envelope.
    pub fn random<R: rand::Rng>(rng: &mut R, complex: bool) -> SphereBundleFunction {
        let draw = |rng: &mut R| {
            let x = [Expr::var(0), Expr::var(1)];
            let z = Expr::var(2);
            let mut acc = Expr::zero();
            for k in 0..3 {
                for trig in 0..2 {
                    if k == 0 && trig == 1 {
                        continue;
                    }
                    let coef = rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0) * x[0].clone() + rng.random_range(-1.0..1.0) * x[1].clone();
                    let arg = k as f64 * z.clone();
                    acc = acc + coef * if trig == 0 { arg.cos() } else { arg.sin() };
                }
            }
            let env = (rng.random_range(-0.5..0.5) * x[0].clone() + rng.random_range(-0.5..0.5) * x[1].clone()).exp();
            acc * env
        };
        let re = draw(rng);
        let im = if complex { draw(rng) } else { Expr::zero() };
        SphereBundleFunction { value: CExpr::new(re, im) }
    }

    /// Degree-zero extension `ũ(x, ξ) = u(x, ζ(x, ξ))` as an expression in
    /// `(x₁, x₂, ξ¹, ξ²)`.
    pub fn extension(&self, metric: &ChartMetric) -> CExpr {
        let zeta = frame_angle_expr(metric);
        self.value.subst(&[Expr::var(0), Expr::var(1), zeta])
    }
}

/// `ζ(x, ξ) = atan2(η₂, η₁)` with `η = Lᵀ ξ`, `g = L Lᵀ`.
pub fn frame_angle_expr(metric: &ChartMetric) -> Expr {
    let g = metric.components();
    let shift = [Expr::var(0), Expr::var(1)];
    let g11 = g[0][0].subst(&shift);
    let g12 = g[0][1].subst(&shift);
    let g22 = g[1][1].subst(&shift);
    let l11 = g11.sqrt();
    let l21 = g12 / l11.clone();
    let l22 = (g22 - l21.sq()).sqrt();
    let (xi1, xi2) = (Expr::var(2), Expr::var(3));
    let eta1 = l11 * xi1 + l21 * xi2.clone();
    let eta2 = l22 * xi2;
    eta2.atan2(&eta1)
}

/// Cholesky factor entries `(l11, l21, l22)` of a 2×2 metric value.
fn chol2(g: &DMatrix<f64>) -> (f64, f64, f64) {
    let l11 = g[(0, 0)].sqrt();
    let l21 = g[(0, 1)] / l11;
    (l11, l21, (g[(1, 1)] - l21 * l21).sqrt())
}

/// Frame angle of a tangent vector.
pub fn frame_angle(metric: &ChartMetric, x: &[f64], v: &[f64]) -> f64 {
    if metric.is_constant() {
        let (l11, l21, l22) = chol2(&metric.value_unchecked(x));
        return (l22 * v[1]).atan2(l11 * v[0] + l21 * v[1]);
    }
    let (l11, l21, l22) = chol2(&metric.value_unchecked(x));
    (l22 * v[1]).atan2(l11 * v[0] + l21 * v[1])
}

/// Unit vector at frame angle `zeta`: `ξ = L^{-T}(cos ζ, sin ζ)`.
pub fn frame_vector(metric: &ChartMetric, x: &[f64], zeta: f64) -> [f64; 2] {
    let (l11, l21, l22) = chol2(&metric.value_unchecked(x));
    let e2 = zeta.sin() / l22;
    let e1 = (zeta.cos() - l21 * e2) / l11;
    [e1, e2]
}

/// How the second-order jet of the extension is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JetMode {
    /// Forward-mode jets of the expression.
    Exact,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

fn fd_jet(f: &dyn Fn(&[f64]) -> f64, p: &[f64], h: f64) -> Jet {
    let n = p.len();
    let mut j = Jet::constant_in(n, 2, f(p));
    let at = |shifts: &[(usize, f64)]| {
        let mut q = p.to_vec();
        for (i, s) in shifts {
            q[*i] += s;
        }
        f(&q)
    };
    let f0 = f(p);
    for i in 0..n {
        let mut e = vec![0u8; n];
        e[i] = 1;
        let k = j.table().monomial(&e).expect("first-order monomial");
        let (fp, fm) = (at(&[(i, h)]), at(&[(i, -h)]));
        j.c[k] = (fp - fm) / (2.0 * h);
        e[i] = 2;
        let k = j.table().monomial(&e).expect("second-order monomial");
        j.c[k] = 0.5 * (fp - 2.0 * f0 + fm) / (h * h);
        for l in i + 1..n {
            let mut e = vec![0u8; n];
            e[i] = 1;
            e[l] = 1;
            let k = j.table().monomial(&e).expect("mixed monomial");
            j.c[k] = (at(&[(i, h), (l, h)]) - at(&[(i, h), (l, -h)]) - at(&[(i, -h), (l, h)]) + at(&[(i, -h), (l, -h)]))
                / (4.0 * h * h);
        }
    }
    j
}

/// Individual terms of the Pestov identity at one point of SM.
#[derive(Clone, Copy, Debug, Default)]
pub struct PestovTerms {
    /// `|∂Hu|²`
    pub lhs: f64,
    /// `|H∂u|²`
    pub h_du: f64,
    /// `δV = ∇_i V^i`
    pub delta_v: f64,
    /// `θW = ∂_i W^i`
    pub theta_w: f64,
    /// `R(∂u, ξ, ξ, ∂u)`
    pub curvature: f64,
}

impl PestovTerms {
    pub fn residual(&self) -> f64 {
        (self.lhs - (self.h_du + self.delta_v + self.theta_w - self.curvature)).abs()
    }

    pub fn scale(&self) -> f64 {
        [self.lhs, self.h_du, self.delta_v, self.theta_w, self.curvature].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn add(self, o: PestovTerms) -> PestovTerms {
        PestovTerms {
            lhs: self.lhs + o.lhs,
            h_du: self.h_du + o.h_du,
            delta_v: self.delta_v + o.delta_v,
            theta_w: self.theta_w + o.theta_w,
            curvature: self.curvature + o.curvature,
        }
    }
}

/// Evaluates the Pestov terms for a real function from the 2-jet of its
/// degree-zero extension in `(x₁, x₂, ξ¹, ξ²)`.
fn pestov_from_jet(metric: &ChartMetric, p: &[f64; 4], u: &Jet) -> Result<PestovTerms> {
    let n = 2;
    let x = &p[..2];
    let xi = [p[2], p[3]];
    let vars = Jet::vars(p, 2);
    let g: Vec<Jet> = metric.components().iter().flatten().map(|e| e.eval(&vars)).collect();
    let (ginv, det) = invert_jets(n, &g);
    let mj = MetricJets { n, g, ginv, det };
    let gam = mj.christoffel();
    let gv = |a: usize, b: usize| mj.g[a * n + b].value();
    let giv = |a: usize, b: usize| mj.ginv[a * n + b].value();
    let gam_v = |l: usize, j: usize, k: usize| gam[(l * n + j) * n + k].value();
    let xij: Vec<Jet> = (0..n).map(|k| vars[2 + k].clone()).collect();
    let lower = [gv(0, 0) * xi[0] + gv(0, 1) * xi[1], gv(1, 0) * xi[0] + gv(1, 1) * xi[1]];
    // Derivatives of (Q ∘ p) at |ξ| = 1 from the first-order jet of Q.
    let ext = |q: &Jet| -> ([f64; 2], [f64; 2]) {
        let qx = [q.d(2), q.d(3)];
        let mut dx = [0.0; 2];
        let mut dxi = [0.0; 2];
        for i in 0..n {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += mj.g[a * n + b].d(i) * xi[a] * xi[b];
                }
            }
            dx[i] = q.d(i) + (qx[0] * xi[0] + qx[1] * xi[1]) * (-0.5 * s);
        }
        for k in 0..n {
            for m in 0..n {
                let kd = if m == k { 1.0 } else { 0.0 };
                dxi[k] += qx[m] * (kd - xi[m] * lower[k]);
            }
        }
        (dx, dxi)
    };
    let ux: Vec<Jet> = (0..n).map(|i| u.diff(i)).collect();
    let uxi: Vec<Jet> = (0..n).map(|l| u.diff(2 + l)).collect();
    let zero = ux[0].cst(0.0);
    // Horizontal derivative extension ∇_i ũ.
    let nab: Vec<Jet> = (0..n)
        .map(|i| {
            let mut acc = ux[i].clone();
            for l in 0..n {
                for k in 0..n {
                    acc = acc - gam[(l * n + i) * n + k].clone() * xij[k].clone() * uxi[l].clone();
                }
            }
            acc
        })
        .collect();
    let hu = (0..n).fold(zero.clone(), |a, i| a + xij[i].clone() * nab[i].clone());
    let raise = |w: &[Jet]| -> Vec<Jet> {
        (0..n).map(|i| (0..n).fold(zero.clone(), |a, j| a + mj.ginv[i * n + j].clone() * w[j].clone())).collect()
    };
    let up_du = raise(&uxi);
    let up_nab = raise(&nab);
    let pair = (0..n).fold(zero.clone(), |a, i| a + up_du[i].clone() * nab[i].clone());
    let v: Vec<Jet> = (0..n).map(|i| pair.clone() * xij[i].clone() - hu.clone() * up_du[i].clone()).collect();
    let w: Vec<Jet> = (0..n).map(|i| hu.clone() * up_nab[i].clone()).collect();

    let norm2 = |c: &[f64; 2]| {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += giv(a, b) * c[a] * c[b];
            }
        }
        s
    };
    // |∂Hu|²
    let (_, dhu) = ext(&hu);
    let lhs = norm2(&dhu);
    // H∂u: ξ^i ∇_i of the covector ∂_j u.
    let mut hdu = [0.0; 2];
    let exts: Vec<([f64; 2], [f64; 2])> = uxi.iter().map(|q| ext(q)).collect();
    for j in 0..n {
        for i in 0..n {
            let (dx, dxi) = exts[j];
            let mut t = dx[i];
            for s in 0..n {
                t -= gam_v(s, i, j) * uxi[s].value();
            }
            for l in 0..n {
                for k in 0..n {
                    t -= gam_v(l, i, k) * xi[k] * dxi[l];
                }
            }
            hdu[j] += xi[i] * t;
        }
    }
    let h_du = norm2(&hdu);
    // δV = ∇_i V^i
    let mut delta_v = 0.0;
    for i in 0..n {
        let (dx, dxi) = ext(&v[i]);
        delta_v += dx[i];
        for s in 0..n {
            delta_v += gam_v(i, i, s) * v[s].value();
        }
        for l in 0..n {
            for k in 0..n {
                delta_v -= gam_v(l, i, k) * xi[k] * dxi[l];
            }
        }
    }
    // θW = ∂_i W^i
    let theta_w: f64 = (0..n).map(|i| ext(&w[i]).1[i]).sum();
    let rep = curvature(metric, x)?;
    let du_up = [up_du[0].value(), up_du[1].value()];
    let mut curv = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    curv += rep.riemann[idx4(n, a, b, c, d)] * du_up[a] * xi[b] * xi[c] * du_up[d];
                }
            }
        }
    }
    Ok(PestovTerms { lhs, h_du, delta_v, theta_w, curvature: curv })
}

/// Terms of `|∂Hu|² = |H∂u|² + δV + θW − R(∂u, ξ, ξ, ∂u)` at `(x, ξ(ζ))`.
/// Complex functions contribute their real and imaginary parts additively.
pub fn pestov_terms(metric: &ChartMetric, u: &SphereBundleFunction, x: &[f64], zeta: f64, mode: JetMode) -> Result<PestovTerms> {
    if metric.dim() != 2 {
        return Err(Error::Dimension("sphere-bundle calculus is implemented for surfaces".into()));
    }
    metric.chart.require_interior(x)?;
    let xi = frame_vector(metric, x, zeta);
    let p = [x[0], x[1], xi[0], xi[1]];
    let ext = u.extension(metric);
    let parts: Vec<&Expr> = if ext.is_real() { vec![&ext.re] } else { vec![&ext.re, &ext.im] };
    let mut total = PestovTerms::default();
    for e in parts {
        let jet = match mode {
            JetMode::Exact => e.jet(&p, 2),
            JetMode::FiniteDifference(h) => fd_jet(&|q: &[f64]| e.at(q), &p, h),
        };
        total = total.add(pestov_from_jet(metric, &p, &jet)?);
    }
    Ok(total)
}

/// `|LHS − RHS|` of the Pestov identity.
pub fn pestov_residual(m: &SimpleManifold, u: &SphereBundleFunction, x: &[f64], zeta: f64) -> Result<f64> {
    Ok(pestov_terms(&m.metric, u, x, zeta, JetMode::Exact)?.residual())
}

/// Simpson weights times the attenuation factor `exp(∫₀^{t_k} a)` on a path.
pub fn ray_weights(path: &GeodesicPath, a: &ScalarField) -> Vec<Complex64> {
    let n = path.steps();
    let h = path.dt();
    let av: Vec<Complex64> = path.x.iter().map(|p| a.at(p)).collect();
    let mut cum = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut k = 0;
    while k + 2 <= n {
        let (f0, f1, f2) = (av[k], av[k + 1], av[k + 2]);
        cum[k + 1] = cum[k] + (f0 * 5.0 + f1 * 8.0 - f2) * (h / 12.0);
        cum[k + 2] = cum[k] + (f0 + f1 * 4.0 + f2) * (h / 3.0);
        k += 2;
    }
    (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            cum[k].exp() * (w * h / 3.0)
        })
        .collect()
}

/// One fan ray's transform value.
#[derive(Clone, Debug)]
pub struct MeasurementEntry {
    pub boundary_index: usize,
    pub angle_index: usize,
    pub point: [f64; 2],
    pub direction: [f64; 2],
    pub value: Complex64,
}

/// Transform values over a fan.
#[derive(Clone, Debug)]
pub struct FanMeasurement {
    pub entries: Vec<MeasurementEntry>,
    pub attenuation: ScalarField,
}

impl FanMeasurement {
    pub fn values(&self) -> Vec<Complex64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0f64, |m, e| m.max(e.value.norm()))
    }
}

fn check_fan(m: &SimpleManifold, fan: &Fan) -> Result<()> {
    for r in &fan.rays {
        if m.beta_at(&r.point).abs() > 1e-8 {
            return Err(Error::InvalidParameters("fan does not start on this manifold's boundary".into()));
        }
    }
    Ok(())
}

/// `I^a F` on every fan ray for `F = f + α(ξ)`.
pub fn forward(
    m: &SimpleManifold,
    a: &ScalarField,
    f: &ScalarField,
    alpha: Option<&OneFormField>,
    fan: &Fan,
) -> Result<FanMeasurement> {
    check_fan(m, fan)?;
    if let Some(al) = alpha {
        if al.dim() != 2 {
            return Err(Error::Dimension("one-form must have two components".into()));
        }
    }
    let entries = fan
        .rays
        .par_iter()
        .map(|r| {
            let w = ray_weights(&r.path, a);
            let mut s = Complex64::new(0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let x = &r.path.x[k];
                let mut fv = f.at(x);
                if let Some(al) = alpha {
                    let v = r.path.v[k];
                    fv += al.comps[0].at(x) * v[0] + al.comps[1].at(x) * v[1];
                }
                s += wk * fv;
            }
            MeasurementEntry {
                boundary_index: r.boundary_index,
                angle_index: r.angle_index,
                point: r.point,
                direction: r.direction,
                value: s,
            }
        })
        .collect();
    Ok(FanMeasurement { entries, attenuation: a.clone() })
}

/// Result of [`kernel_probe`].
#[derive(Clone, Debug)]
pub struct KernelProbe {
    pub max_abs: f64,
    /// Largest `|p|` seen at fan boundary points.
    pub boundary_max: f64,
    /// False when `p` does not vanish on the boundary, in which case the
    /// gauge identity does not apply.
    pub p_vanishes_on_boundary: bool,
}

/// `max |I^a(a p + dp(ξ))|` over the fan.
pub fn kernel_probe(m: &SimpleManifold, a: &ScalarField, p: &Expr, fan: &Fan, tol: f64) -> Result<KernelProbe> {
    let boundary_max = fan.rays.iter().fold(0.0f64, |mx, r| mx.max(p.at(&r.point).abs()));
    let f = ScalarField::complex(2, a.value.clone() * CExpr::real(p.clone()));
    let alpha = OneFormField::real(vec![p.diff(0), p.diff(1)]);
    let meas = forward(m, a, &f, Some(&alpha), fan)?;
    Ok(KernelProbe { max_abs: meas.max_abs(), boundary_max, p_vanishes_on_boundary: boundary_max <= tol })
}

/// Both sides of Santaló's formula.
#[derive(Clone, Copy, Debug)]
pub struct SantaloReport {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub residual: f64,
}

/// Quadrature resolution for `∫_{SM} v`.
#[derive(Clone, Copy, Debug)]
pub struct SmQuadrature {
    pub radial: usize,
    pub angular: usize,
    pub fibre: usize,
}

impl Default for SmQuadrature {
    fn default() -> Self {
        SmQuadrature { radial: 48, angular: 256, fibre: 64 }
    }
}

/// `∫_{SM} v` over star-shaped polar coordinates about the manifold centre.
pub fn sm_integral(m: &SimpleManifold, v: &SphereBundleFunction, q: &SmQuadrature) -> Result<Complex64> {
    let (gx, gw) = linalg::gauss_legendre(q.radial);
    let dpsi = 2.0 * PI / q.angular as f64;
    let dz = 2.0 * PI / q.fibre as f64;
    let c = &m.center;
    let parts: Vec<Complex64> = (0..q.angular)
        .into_par_iter()
        .map(|k| {
            let psi = k as f64 * dpsi;
            let r = boundary_radius(m, psi)?;
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, w) in gx.iter().zip(&gw) {
                let s = 0.5 * (1.0 + s);
                let w = 0.5 * w;
                let x = [c[0] + s * r * psi.cos(), c[1] + s * r * psi.sin()];
                let det = m.metric.value_unchecked(&x).determinant();
                let mut fib = Complex64::new(0.0, 0.0);
                for j in 0..q.fibre {
                    fib += v.at(&x, j as f64 * dz);
                }
                acc += fib * (dz * w * s * r * r * det.sqrt());
            }
            Ok(acc * dpsi)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().sum())
}

/// `Σ cos α ∫₀^τ v(γ, γ̇) dt` weighted by the fan's boundary and angle weights.
pub fn fan_integral(m: &SimpleManifold, v: &SphereBundleFunction, fan: &Fan) -> Complex64 {
    let one = ScalarField::constant(2, 0.0);
    let parts: Vec<Complex64> = fan
        .rays
        .par_iter()
        .map(|r| {
            let w = ray_weights(&r.path, &one);
            let mut s = Complex64::new(0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                let x = r.path.x[k];
                let z = frame_angle(&m.metric, &x, &r.path.v[k]);
                s += wk * v.at(&x, z);
            }
            s * r.alpha.cos()
        })
        .collect();
    parts.into_iter().sum::<Complex64>() * (fan.boundary_weight * fan.angle_weight)
}

/// Santaló residual `|∫_{SM} v − (−∫_{∂₊SM} ∫₀^τ v ⟨ξ,ν⟩ dt)|`.
pub fn santalo_residual(m: &SimpleManifold, v: &SphereBundleFunction, fan: &Fan, q: &SmQuadrature) -> Result<SantaloReport> {
    let lhs = sm_integral(m, v, q)?;
    let rhs = fan_integral(m, v, fan);
    Ok(SantaloReport { lhs, rhs, residual: (lhs - rhs).norm() })
}

/// Whether a fan refinement improved the Santaló residual enough; a factor
/// below 1.5 flags the coarse fan as too coarse.
pub fn santalo_refinement_ok(coarse: &SantaloReport, fine: &SantaloReport, floor: f64) -> bool {
    fine.residual <= floor || coarse.residual >= 1.5 * fine.residual
}

/// Tensor-product grid of bilinear hat functions.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalGrid {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl NodalGrid {
    pub fn new(lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Result<NodalGrid> {
        if nx < 2 || ny < 2 || !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::InvalidParameters("grid needs at least 2x2 nodes on a nonempty box".into()));
        }
        Ok(NodalGrid { lo, hi, nx, ny })
    }

    /// Grid over the bounding box of `M`.
    pub fn covering(m: &SimpleManifold, nx: usize, ny: usize) -> Result<NodalGrid> {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for k in 0..720 {
            let p = boundary_point(m, k as f64 * PI / 360.0)?;
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        NodalGrid::new(lo, hi, nx, ny)
    }

    pub fn spacing(&self) -> [f64; 2] {
        [(self.hi[0] - self.lo[0]) / (self.nx - 1) as f64, (self.hi[1] - self.lo[1]) / (self.ny - 1) as f64]
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        let h = self.spacing();
        [self.lo[0] + (k % self.nx) as f64 * h[0], self.lo[1] + (k / self.nx) as f64 * h[1]]
    }

    /// Nodes and bilinear weights of the cell containing `x`.
    pub fn hats(&self, x: &[f64]) -> Option<[(usize, f64); 4]> {
        let h = self.spacing();
        let fx = (x[0] - self.lo[0]) / h[0];
        let fy = (x[1] - self.lo[1]) / h[1];
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (self.nx - 1) as f64 && fy <= (self.ny - 1) as f64) {
            return None;
        }
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (s, t) = (fx - i as f64, fy - j as f64);
        let k = j * self.nx + i;
        Some([
            (k, (1.0 - s) * (1.0 - t)),
            (k + 1, s * (1.0 - t)),
            (k + self.nx, (1.0 - s) * t),
            (k + self.nx + 1, s * t),
        ])
    }
}

/// Unknowns represented on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unknowns {
    Function,
    FunctionAndForm,
}

/// Scalar type of a transform matrix.
pub trait TransformScalar: ComplexField<RealField = f64> + Copy {
    /// Bytes per entry in the cache file.
    const WIDTH: usize;
    fn from_c64(z: Complex64) -> Result<Self>;
    fn to_c64(self) -> Complex64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(b: &[u8]) -> Self;
}

impl TransformScalar for f64 {
    const WIDTH: usize = 8;
    fn from_c64(z: Complex64) -> Result<f64> {
        if z.im != 0.0 {
            return Err(Error::ComplexField);
        }
        Ok(z.re)
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> f64 {
        f64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
    }
}

impl TransformScalar for Complex64 {
    const WIDTH: usize = 16;
    fn from_c64(z: Complex64) -> Result<Complex64> {
        Ok(z)
    }
    fn to_c64(self) -> Complex64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Complex64 {
        Complex64::new(f64::read_le(&b[..8]), f64::read_le(&b[8..16]))
    }
}

/// Dense discretization of the transform.
#[derive(Clone, Debug)]
pub struct TransformSystem<T: TransformScalar> {
    pub grid: NodalGrid,
    /// Grid nodes carrying unknowns, in column order.
    pub dofs: Vec<usize>,
    pub unknowns: Unknowns,
    pub matrix: DMatrix<T>,
    /// Tikhonov factor relative to `‖A‖₂²`.
    pub regularization: f64,
    /// Rays that miss every grid support.
    pub zero_rows: Vec<usize>,
}

/// Columns whose largest entry falls below this fraction of the largest
/// entry overall are removed from the system.
pub const PRUNE_RATIO: f64 = 1e-3;

/// Nodes whose hat support meets `M`.
pub fn active_nodes(m: &SimpleManifold, grid: &NodalGrid) -> Vec<usize> {
    let h = grid.spacing();
    (0..grid.nx * grid.ny)
        .filter(|&k| {
            let c = grid.node(k);
            (0..=8).any(|a| {
                (0..=8).any(|b| {
                    let x = [c[0] + (a as f64 / 4.0 - 1.0) * h[0], c[1] + (b as f64 / 4.0 - 1.0) * h[1]];
                    m.contains(&x)
                })
            })
        })
        .collect()
}

/// Assembles the matrix whose column `j` is the transform of the `j`-th hat function
/// (and, for form unknowns, of `hat · dx^1` and `hat · dx^2`).
pub fn build_system<T: TransformScalar>(
    m: &SimpleManifold,
    a: &ScalarField,
    fan: &Fan,
    grid: &NodalGrid,
    unknowns: Unknowns,
) -> Result<TransformSystem<T>> {
    if fan.rays.is_empty() {
        return Err(Error::InvalidParameters("empty fan".into()));
    }
    check_fan(m, fan)?;
    let dofs = active_nodes(m, grid);
    let mut col_of = vec![usize::MAX; grid.nx * grid.ny];
    for (c, k) in dofs.iter().enumerate() {
        col_of[*k] = c;
    }
    let nd = dofs.len();
    let ncols = match unknowns {
        Unknowns::Function => nd,
        Unknowns::FunctionAndForm => 3 * nd,
    };
    let rows: Vec<Vec<Complex64>> = fan
        .rays
        .par_iter()
        .map(|r| {
            let w = ray_weights(&r.path, a);
            let mut row = vec![Complex64::new(0.0, 0.0); ncols];
            for (k, wk) in w.iter().enumerate() {
                let x = r.path.x[k];
                if let Some(hs) = grid.hats(&x) {
                    for (node, hw) in hs {
                        let c = col_of[node];
                        if c == usize::MAX || hw == 0.0 {
                            continue;
                        }
                        let base = wk * hw;
                        row[c] += base;
                        if unknowns == Unknowns::FunctionAndForm {
                            row[nd + c] += base * r.path.v[k][0];
                            row[2 * nd + c] += base * r.path.v[k][1];
                        }
                    }
                }
            }
            row
        })
        .collect();
    // Hats that only graze M give near-zero columns; they are dropped.
    let node_amax: Vec<f64> = (0..nd)
        .map(|c| {
            let comps = if unknowns == Unknowns::Function { 1 } else { 3 };
            rows.iter().fold(0.0f64, |m, r| (0..comps).fold(m, |m, q| m.max(r[q * nd + c].norm())))
        })
        .collect();
    let top = node_amax.iter().cloned().fold(0.0f64, f64::max);
    let kept: Vec<usize> = (0..nd).filter(|c| node_amax[*c] >= PRUNE_RATIO * top).collect();
    let comps = if unknowns == Unknowns::Function { 1 } else { 3 };
    let cols: Vec<usize> = (0..comps).flat_map(|q| kept.iter().map(move |c| q * nd + c)).collect();
    let dofs: Vec<usize> = kept.iter().map(|c| dofs[*c]).collect();
    let mut matrix = DMatrix::<T>::zeros(rows.len(), cols.len());
    let mut zero_rows = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if cols.iter().all(|j| row[*j].norm() == 0.0) {
            zero_rows.push(i);
        }
        for (jj, j) in cols.iter().enumerate() {
            matrix[(i, jj)] = T::from_c64(row[*j])?;
        }
    }
    Ok(TransformSystem { grid: grid.clone(), dofs, unknowns, matrix, regularization: 1e-6, zero_rows })
}

impl<T: TransformScalar> TransformSystem<T> {
    /// Nodal values of a scalar field on the active nodes.
    pub fn project_function(&self, f: &ScalarField) -> Result<DVector<T>> {
        let vals: Vec<T> = self.dofs.iter().map(|k| T::from_c64(f.at(&self.grid.node(*k)))).collect::<Result<_>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// Nodal coefficients of `(f, α₁, α₂)` for form unknowns.
    pub fn project_pair(&self, f: &ScalarField, alpha: &OneFormField) -> Result<DVector<T>> {
        let mut v = Vec::with_capacity(3 * self.dofs.len());
        for k in &self.dofs {
            v.push(T::from_c64(f.at(&self.grid.node(*k)))?);
        }
        for comp in &alpha.comps {
            for k in &self.dofs {
                v.push(T::from_c64(comp.at(&self.grid.node(*k)))?);
            }
        }
        Ok(DVector::from_vec(v))
    }

    /// Bilinear interpolation of the function part of `coeffs` at `x`.
    pub fn interpolate(&self, coeffs: &DVector<T>, x: &[f64]) -> T {
        let mut col_of = std::collections::HashMap::new();
        for (c, k) in self.dofs.iter().enumerate() {
            col_of.insert(*k, c);
        }
        let mut s = T::zero();
        if let Some(hs) = self.grid.hats(x) {
            for (node, w) in hs {
                if let Some(c) = col_of.get(&node) {
                    s += coeffs[*c] * T::from_real(w);
                }
            }
        }
        s
    }

    pub fn apply(&self, coeffs: &DVector<T>) -> DVector<T> {
        &self.matrix * coeffs
    }

    /// Smallest and largest singular values from the eigenvalues of `A* A`.
    pub fn singular_range(&self) -> (f64, f64) {
        let ata = self.matrix.ad_mul(&self.matrix);
        let ev = ata.symmetric_eigenvalues();
        let lo = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.clone().real()));
        let hi = ev.iter().fold(0.0f64, |m, v| m.max(v.clone().real()));
        (lo.max(0.0).sqrt(), hi.max(0.0).sqrt())
    }

    /// Writes the matrix in the `XRTM` cache format.
    pub fn save_matrix(&self, path: &Path) -> Result<()> {
        write_xrtm(path, &self.matrix)
    }
}

pub const XRTM_MAGIC: &[u8; 4] = b"XRTM";
pub const XRTM_VERSION: u32 = 1;

/// `XRTM`, version, rows, cols (u32 little endian), then row-major entries.
pub fn encode_xrtm<T: TransformScalar>(m: &DMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + T::WIDTH * m.len());
    out.extend_from_slice(XRTM_MAGIC);
    out.extend_from_slice(&XRTM_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)].write_le(&mut out);
        }
    }
    out
}

pub fn decode_xrtm<T: TransformScalar>(b: &[u8]) -> Result<DMatrix<T>> {
    if b.len() < 16 || &b[..4] != XRTM_MAGIC {
        return Err(Error::Cache("missing XRTM header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != XRTM_VERSION {
        return Err(Error::Cache(format!("unsupported version {}", word(4))));
    }
    let (r, c) = (word(8) as usize, word(12) as usize);
    if b.len() != 16 + T::WIDTH * r * c {
        return Err(Error::Cache(format!("size {} does not match a {r}x{c} matrix of {}-byte entries", b.len(), T::WIDTH)));
    }
    let body = &b[16..];
    Ok(DMatrix::from_fn(r, c, |i, j| T::read_le(&body[(i * c + j) * T::WIDTH..])))
}

pub fn write_xrtm<T: TransformScalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Cache(e.to_string()))?;
    f.write_all(&encode_xrtm(m)).map_err(|e| Error::Cache(e.to_string()))
}

pub fn read_xrtm<T: TransformScalar>(path: &Path) -> Result<DMatrix<T>> {
    let mut b = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut b)).map_err(|e| Error::Cache(e.to_string()))?;
    decode_xrtm(&b)
}

/// Reconstruction and solver statistics.
#[derive(Clone, Debug)]
pub struct Inversion<T: TransformScalar> {
    pub coeffs: DVector<T>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub lambda: f64,
}

/// Tikhonov-regularized least squares by conjugate gradients on the normal
/// equations, `λ = regularization · ‖A‖₂²`.
pub fn invert<T: TransformScalar>(system: &TransformSystem<T>, y: &[Complex64]) -> Result<Inversion<T>> {
    if y.len() != system.matrix.nrows() {
        return Err(Error::Dimension(format!("{} measurements for {} rows", y.len(), system.matrix.nrows())));
    }
    let b = DVector::from_vec(y.iter().map(|z| T::from_c64(*z)).collect::<Result<Vec<T>>>()?);
    let norm = linalg::spectral_norm(&system.matrix, 500);
    let lambda = system.regularization * norm * norm;
    let max_iter = 10 * system.matrix.ncols();
    let rep = linalg::cg_normal(&system.matrix, &b, lambda, 1e-10, max_iter);
    if !rep.converged {
        return Err(Error::NonConvergence(format!(
            "CG stopped at relative residual {:e} after {} iterations",
            rep.relative_residual, rep.iterations
        )));
    }
    Ok(Inversion { coeffs: rep.x, iterations: rep.iterations, relative_residual: rep.relative_residual, lambda })
}

/// Relative L² error of the function part against `truth` on active nodes inside `M`.
pub fn relative_error<T: TransformScalar>(m: &SimpleManifold, system: &TransformSystem<T>, coeffs: &DVector<T>, truth: &ScalarField) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (c, k) in system.dofs.iter().enumerate() {
        let x = system.grid.node(*k);
        if m.contains(&x) {
            let t = truth.at(&x);
            num += (coeffs[c].to_c64() - t).norm_sqr();
            den += t.norm_sqr();
        }
    }
    (num / den).sqrt()
}
