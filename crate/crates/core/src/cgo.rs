//! Complex geometrical optics quasimodes on `c · (1 ⊕ g₀)`.
//!
//! Coordinates are `(x₁, r, θ)` with `(r, θ)` polar normal coordinates of `g₀`
//! about `ω`; the phase is `ρ = x₁ + i r` and `∂̄ = ½(∂_{x₁} + i ∂_r)`.

use crate::error::{Error, Result};
use crate::expr::{CExpr, Expr};
use crate::geometry::{laplacian_of_jet, Chart, ChartMetric, OneFormField};
use crate::jet::Real;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Polar normal coordinates of `g₀ = (1 + k|y − ω|²/4)⁻² δ`, which has
/// constant curvature `k`: `y = ω + s(r)(cos θ, sin θ)`.
#[derive(Clone, Debug)]
pub struct PolarMap {
    pub curvature: f64,
    pub omega: [f64; 2],
    /// `y₁, y₂` as expressions in `(x₁, r, θ)`.
    pub y: [Expr; 2],
}

impl PolarMap {
    pub fn constant_curvature(k: f64, omega: [f64; 2]) -> PolarMap {
        let r = Expr::var(1);
        let th = Expr::var(2);
        let s = radial_profile(k, r);
        PolarMap { curvature: k, omega, y: [omega[0] + s.clone() * th.cos(), omega[1] + s * th.sin()] }
    }

    /// First conjugate distance from `ω`.
    pub fn conjugate_radius(&self) -> f64 {
        if self.curvature > 0.0 {
            PI / self.curvature.sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// Euclidean radius `s(r)` in the `y` chart.
    pub fn euclidean_radius(&self, r: f64) -> f64 {
        radial_profile(self.curvature, Expr::c(r)).at(&[])
    }
}

fn radial_profile(k: f64, r: Expr) -> Expr {
    if k > 0.0 {
        let q = k.sqrt();
        (2.0 / q) * (0.5 * q * r.clone()).sin() / (0.5 * q * r).cos()
    } else if k < 0.0 {
        let q = (-k).sqrt();
        let e = (q * r).exp();
        (2.0 / q) * (e.clone() - 1.0) / (e + 1.0)
    } else {
        r
    }
}

/// `c · (1 ⊕ g₀)` with `c` given in product coordinates `(x₁, y₁, y₂)`.
#[derive(Clone, Debug)]
pub struct AdmissibleMetric {
    pub c: Expr,
    pub g0: ChartMetric,
    pub polar: PolarMap,
    /// Geodesic radius of `D` about `ω`.
    pub radius: f64,
    pub x1_range: [f64; 2],
}

/// Smallest admissible `r` as a fraction of the diameter of `D`.
pub const R_MIN_FRACTION: f64 = 0.05;

impl AdmissibleMetric {
    /// `g₀` of curvature `k` on the geodesic disc of the given radius about `ω`.
    pub fn new(c: Expr, curvature: f64, omega: [f64; 2], radius: f64) -> Result<AdmissibleMetric> {
        let polar = PolarMap::constant_curvature(curvature, omega);
        if !(radius > 0.0) {
            return Err(Error::InvalidParameters("disc radius must be positive".into()));
        }
        if radius >= polar.conjugate_radius() {
            return Err(Error::ConjugatePoint(format!(
                "radius {radius} reaches the conjugate distance {}",
                polar.conjugate_radius()
            )));
        }
        let s = polar.euclidean_radius(radius);
        let y = Expr::coords(2);
        let d: Vec<Expr> = y.iter().zip(omega).map(|(y, w)| y.clone() - w).collect();
        let conf = (1.0 + 0.25 * curvature * Expr::dot(&d, &d)).powi(-2);
        let chart = Chart::new(vec![omega[0] - 1.25 * s, omega[1] - 1.25 * s], vec![omega[0] + 1.25 * s, omega[1] + 1.25 * s])?;
        let g0 = ChartMetric::euclidean(chart).conformal(&conf);
        let am = AdmissibleMetric { c, g0, polar, radius, x1_range: [-2.0, 2.0] };
        for i in 0..=4 {
            for j in 0..=4 {
                for k in 0..8 {
                    let p = [
                        am.x1_range[0] + (am.x1_range[1] - am.x1_range[0]) * i as f64 / 4.0,
                        radius * j as f64 / 4.0,
                        2.0 * PI * k as f64 / 8.0,
                    ];
                    am.check_c(&p)?;
                }
            }
        }
        Ok(am)
    }

    pub fn with_x1_range(mut self, lo: f64, hi: f64) -> AdmissibleMetric {
        self.x1_range = [lo, hi];
        self
    }

    pub fn r_min(&self) -> f64 {
        R_MIN_FRACTION * 2.0 * self.radius
    }

    /// `c` composed with the polar map.
    pub fn c_polar(&self) -> Expr {
        self.c.subst(&[Expr::var(0), self.polar.y[0].clone(), self.polar.y[1].clone()])
    }

    /// Scalar in product coordinates `(x₁, y)` composed with the polar map.
    pub fn to_polar(&self, f: &CExpr) -> CExpr {
        f.subst(&[Expr::var(0), self.polar.y[0].clone(), self.polar.y[1].clone()])
    }

    fn check_c(&self, p: &[f64; 3]) -> Result<f64> {
        let v = self.c_polar().at(p);
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite(p.to_vec()));
        }
        Ok(v)
    }

    /// Pull-back of `g₀` to `(r, θ)`: entries `(g_rr, g_rθ, g_θθ)`.
    pub fn polar_block(&self) -> [Expr; 3] {
        let y = &self.polar.y;
        let j = [[y[0].diff(1), y[0].diff(2)], [y[1].diff(1), y[1].diff(2)]];
        let g = self.g0.components();
        let sub = [Expr::var(0), y[0].clone(), y[1].clone()];
        // g₀ components are functions of (y₁, y₂); shift them to vars 1, 2 first.
        let lift = [Expr::var(1), Expr::var(2)];
        let gp: Vec<Vec<Expr>> = g.iter().map(|row| row.iter().map(|e| e.subst(&lift).subst(&sub)).collect()).collect();
        let entry = |a: usize, b: usize| {
            let mut acc = Expr::zero();
            for i in 0..2 {
                for k in 0..2 {
                    acc = acc + j[i][a].clone() * gp[i][k].clone() * j[k][b].clone();
                }
            }
            acc
        };
        [entry(0, 0), entry(0, 1), entry(1, 1)]
    }

    /// `det` of the polar block (the `m(r, θ)` of the normal form).
    pub fn m_expr(&self) -> Expr {
        let [a, b, d] = self.polar_block();
        a * d.clone() - b.sq()
    }

    /// The three-dimensional metric in `(x₁, r, θ)`.
    pub fn assemble(&self) -> Result<ChartMetric> {
        let c = self.c_polar();
        let [grr, grt, gtt] = self.polar_block();
        let z = Expr::zero();
        let comps = vec![
            vec![c.clone(), z.clone(), z.clone()],
            vec![z.clone(), c.clone() * grr, c.clone() * grt.clone()],
            vec![z, c.clone() * grt, c * gtt],
        ];
        let chart = Chart::new(vec![self.x1_range[0], 0.0, -4.0 * PI], vec![self.x1_range[1], self.radius, 4.0 * PI])?;
        ChartMetric::new(chart, comps)
    }

    /// `log(|g| / c²) = log(c · m)`.
    pub fn log_det_ratio(&self) -> Expr {
        (self.c_polar() * self.m_expr()).ln()
    }
}

/// Holomorphic factors `a₀(z)`, `z = x₁ + i r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HolomorphicSpec {
    Constant { re: f64, im: f64 },
    /// `e^{iλz}`.
    Exponential { lambda: f64 },
    /// `z^k`.
    Power { k: u32 },
    /// `z̄^k`, not holomorphic; a negative control.
    ConjugatePower { k: u32 },
}

fn z_expr() -> CExpr {
    CExpr::new(Expr::var(0), Expr::var(1))
}

impl HolomorphicSpec {
    pub fn expr(&self) -> CExpr {
        match self {
            HolomorphicSpec::Constant { re, im } => CExpr::c(Complex64::new(*re, *im)),
            HolomorphicSpec::Exponential { lambda } => (z_expr().mul_i().scale(Expr::c(*lambda))).exp(),
            HolomorphicSpec::Power { k } => z_expr().powi(*k),
            HolomorphicSpec::ConjugatePower { k } => z_expr().conj().powi(*k),
        }
    }
}

/// Amplitude data: `a₀(x₁, r)`, `b(θ)` (an expression in its variable 0) and
/// an optional magnetic phase.
#[derive(Clone, Debug)]
pub struct CgoAmplitude {
    pub a0: CExpr,
    pub b: CExpr,
    pub magnetic: Option<PhaseField>,
}

impl CgoAmplitude {
    pub fn new(a0: CExpr, b: CExpr) -> CgoAmplitude {
        CgoAmplitude { a0, b, magnetic: None }
    }

    pub fn with_phase(mut self, phi: PhaseField) -> CgoAmplitude {
        self.magnetic = Some(phi);
        self
    }

    /// `|g|^{-1/4} c^{1/2} a₀ b = (c m)^{-1/4} a₀ b`, without the magnetic factor.
    pub fn base_expr(&self, am: &AdmissibleMetric) -> CExpr {
        let pre = (am.c_polar() * am.m_expr()).powf(-0.25);
        let b = self.b.subst(&[Expr::var(2)]);
        self.a0.clone() * b.scale(pre)
    }
}

/// Cell-centred sampling of the working region `[x₁] × [r]` at given angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgoGrid {
    pub x1: [f64; 2],
    pub r: [f64; 2],
    pub n_x1: usize,
    pub n_r: usize,
    pub thetas: Vec<f64>,
}

impl CgoGrid {
    pub fn spacing(&self) -> [f64; 2] {
        [(self.x1[1] - self.x1[0]) / self.n_x1 as f64, (self.r[1] - self.r[0]) / self.n_r as f64]
    }

    pub fn point(&self, i: usize, j: usize, theta: f64) -> [f64; 3] {
        let h = self.spacing();
        [self.x1[0] + (i as f64 + 0.5) * h[0], self.r[0] + (j as f64 + 0.5) * h[1], theta]
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.n_x1 * self.n_r * self.thetas.len());
        for &t in &self.thetas {
            for j in 0..self.n_r {
                for i in 0..self.n_x1 {
                    out.push(self.point(i, j, t));
                }
            }
        }
        out
    }

    fn validate(&self, am: &AdmissibleMetric) -> Result<()> {
        if self.n_x1 == 0 || self.n_r == 0 || self.thetas.is_empty() {
            return Err(Error::InvalidParameters("empty CGO grid".into()));
        }
        if self.r[0] < am.r_min() - 1e-12 {
            return Err(Error::Degenerate(format!("grid reaches r = {} below r_min = {}", self.r[0], am.r_min())));
        }
        if self.r[1] > am.radius || self.x1[0] < am.x1_range[0] || self.x1[1] > am.x1_range[1] {
            return Err(Error::OutsideDomain(vec![self.x1[0], self.x1[1], self.r[1]]));
        }
        Ok(())
    }
}

/// `⟨ζ, η⟩_g` extended bilinearly to complex vectors.
pub fn bilinear(g: &DMatrix<f64>, zeta: &[Complex64], eta: &[Complex64]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..zeta.len() {
        for j in 0..eta.len() {
            s += zeta[i] * eta[j] * g[(i, j)];
        }
    }
    s
}

/// `∂ρ` for `ρ = x₁ + i k r`.
fn drho(k: f64) -> [Complex64; 3] {
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, k), Complex64::new(0.0, 0.0)]
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EikonalReport {
    /// `max |g^{jk}∂_jρ ∂_kρ|` over the grid.
    pub max: f64,
    pub min_c_inverse: f64,
}

/// Eikonal defect of `ρ = x₁ + i k r` (`k = 1` is the exact phase).
pub fn eikonal_residual(am: &AdmissibleMetric, phase_scale: f64, grid: &CgoGrid) -> Result<EikonalReport> {
    grid.validate(am)?;
    let g = am.assemble()?;
    let d = drho(phase_scale);
    let vals: Vec<(f64, f64)> = grid
        .points()
        .par_iter()
        .map(|p| {
            let c = am.check_c(p)?;
            let gi = g.inverse(p)?;
            Ok((bilinear(&gi, &d, &d).norm(), 1.0 / c))
        })
        .collect::<Result<_>>()?;
    Ok(EikonalReport {
        max: vals.iter().fold(0.0f64, |m, v| m.max(v.0)),
        min_c_inverse: vals.iter().fold(f64::INFINITY, |m, v| m.min(v.1)),
    })
}

fn dbar(j: &crate::expr::CJet) -> Complex64 {
    0.5 * (j.d(0) + Complex64::i() * j.d(1))
}

/// `max |∂̄a₀|` over the grid.
pub fn holomorphy_defect(a0: &CExpr, grid: &CgoGrid) -> f64 {
    grid.points().iter().map(|p| dbar(&a0.jet(p, 1)).norm()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TransportReport {
    pub residual: f64,
    /// Largest individual term, for relative tolerances.
    pub scale: f64,
    /// Largest `4|a|` on the grid.
    pub amplitude_scale: f64,
    pub holomorphy_defect: f64,
}

/// `max |4∂̄a + (∂̄ log(|g|/c²)) a + 2i(A₁ + iA_r) a|` (the last term when magnetic).
pub fn transport_residual(am: &AdmissibleMetric, amp: &CgoAmplitude, grid: &CgoGrid) -> Result<TransportReport> {
    grid.validate(am)?;
    let base = amp.base_expr(am);
    let logr = am.log_det_ratio();
    if let Some(pf) = &amp.magnetic {
        if pf.grid != *grid {
            return Err(Error::InvalidParameters("magnetic phase was computed on a different grid".into()));
        }
    }
    let pts = grid.points();
    let terms: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .enumerate()
        .map(|(idx, p)| {
            am.check_c(p)?;
            let aj = base.jet(p, 1);
            let lj = logr.jet(p, 1);
            let dl = 0.5 * Complex64::new(lj.d(0), lj.d(1));
            let (a, da, extra) = match &amp.magnetic {
                None => (aj.value(), dbar(&aj), Complex64::new(0.0, 0.0)),
                Some(pf) => {
                    let ph = pf.values[idx];
                    let e = (Complex64::i() * ph).exp();
                    let a = aj.value() * e;
                    let da = e * (dbar(&aj) + Complex64::i() * aj.value() * pf.dbar[idx]);
                    (a, da, 2.0 * Complex64::i() * pf.w[idx] * a)
                }
            };
            let t1 = 4.0 * da;
            let t2 = dl * a;
            Ok(((t1 + t2 + extra).norm(), t1.norm().max(t2.norm()).max(extra.norm()), 4.0 * a.norm()))
        })
        .collect::<Result<_>>()?;
    Ok(TransportReport {
        residual: terms.iter().fold(0.0f64, |m, t| m.max(t.0)),
        scale: terms.iter().fold(0.0f64, |m, t| m.max(t.1)),
        amplitude_scale: terms.iter().fold(0.0f64, |m, t| m.max(t.2)),
        holomorphy_defect: holomorphy_defect(&amp.a0, grid),
    })
}

/// Solution of `∂̄Φ + ½(A₁ + i A_r) = 0` sampled on a [`CgoGrid`].
#[derive(Clone, Debug)]
pub struct PhaseField {
    pub grid: CgoGrid,
    /// `Φ` at the grid points, in [`CgoGrid::points`] order.
    pub values: Vec<Complex64>,
    /// Fourth-order central-difference `∂̄Φ`.
    pub dbar: Vec<Complex64>,
    /// `w = A₁ + i A_r`.
    pub w: Vec<Complex64>,
    /// `max |∂̄Φ + ½ w|`.
    pub residual: f64,
}

/// `∬ 1/u dA(u)` over the rectangle of size `hx × hy` centred at `d`.
pub fn cell_integral(d: Complex64, hx: f64, hy: f64) -> Complex64 {
    if d.re == 0.0 && d.im == 0.0 {
        // Odd integrand over a centred rectangle.
        return Complex64::new(0.0, 0.0);
    }
    let f = |x: f64, y: f64| -> Complex64 {
        let r2 = x * x + y * y;
        if r2 == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let l = 0.5 * r2.ln();
        let re = if x == 0.0 { 0.0 } else { x * (y / x).atan() } + y * l;
        let im = if y == 0.0 { 0.0 } else { y * (x / y).atan() } + x * l;
        Complex64::new(re, -im)
    };
    let (x0, x1) = (d.re - 0.5 * hx, d.re + 0.5 * hx);
    let (y0, y1) = (d.im - 0.5 * hy, d.im + 0.5 * hy);
    f(x1, y1) - f(x0, y1) - f(x1, y0) + f(x0, y0)
}

fn fft2(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// `Φ = −(1/2π) ∬ w(ζ)/(z − ζ) dA(ζ)` over the working rectangle padded by
/// half its size on each side, with `w` piecewise constant on cells and exact
/// cell integrals of the kernel.
pub fn magnetic_phase(am: &AdmissibleMetric, a: &OneFormField, grid: &CgoGrid) -> Result<PhaseField> {
    grid.validate(am)?;
    if a.dim() != 3 {
        return Err(Error::Dimension("magnetic potential must have components (A₁, A_r, A_θ)".into()));
    }
    let w_expr = a.comps[0].clone() + a.comps[1].mul_i();
    let h = grid.spacing();
    let (px, pr) = ((grid.n_x1 / 2).max(4), (grid.n_r / 2).max(4));
    let (nx, nr) = (grid.n_x1 + 2 * px, grid.n_r + 2 * pr);
    let (lx, lr) = (2 * nx, 2 * nr);
    let mut kernel = vec![Complex64::new(0.0, 0.0); lx * lr];
    for j in 0..lr {
        for i in 0..lx {
            let di = if i < nx { i as f64 } else if i > lx - nx { i as f64 - lx as f64 } else { continue };
            let dj = if j < nr { j as f64 } else if j > lr - nr { j as f64 - lr as f64 } else { continue };
            kernel[j * lx + i] = cell_integral(Complex64::new(di * h[0], dj * h[1]), h[0], h[1]);
        }
    }
    fft2(&mut kernel, lx, lr, false);
    let slices: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> = grid
        .thetas
        .par_iter()
        .map(|&theta| {
            let mut buf = vec![Complex64::new(0.0, 0.0); lx * lr];
            for j in 0..nr {
                for i in 0..nx {
                    let p = [
                        grid.x1[0] + (i as f64 - px as f64 + 0.5) * h[0],
                        grid.r[0] + (j as f64 - pr as f64 + 0.5) * h[1],
                        theta,
                    ];
                    buf[j * lx + i] = w_expr.at(&p);
                }
            }
            let w_pad: Vec<Complex64> = (0..nr).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| buf[j * lx + i]).collect();
            fft2(&mut buf, lx, lr, false);
            for (b, k) in buf.iter_mut().zip(&kernel) {
                *b *= k;
            }
            fft2(&mut buf, lx, lr, true);
            let norm = -1.0 / (2.0 * PI * (lx * lr) as f64);
            let phi = |i: usize, j: usize| buf[j * lx + i] * norm;
            let (mut vals, mut dbars, mut ws) = (Vec::new(), Vec::new(), Vec::new());
            for j in pr..pr + grid.n_r {
                for i in px..px + grid.n_x1 {
                    let d1 = (-phi(i + 2, j) + 8.0 * phi(i + 1, j) - 8.0 * phi(i - 1, j) + phi(i - 2, j)) / (12.0 * h[0]);
                    let d2 = (-phi(i, j + 2) + 8.0 * phi(i, j + 1) - 8.0 * phi(i, j - 1) + phi(i, j - 2)) / (12.0 * h[1]);
                    vals.push(phi(i, j));
                    dbars.push(0.5 * (d1 + Complex64::i() * d2));
                    ws.push(w_pad[j * nx + i]);
                }
            }
            (vals, dbars, ws)
        })
        .collect();
    let (mut values, mut dbar, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (v, d, ww) in slices {
        values.extend(v);
        dbar.extend(d);
        w.extend(ww);
    }
    let residual = dbar.iter().zip(&w).map(|(d, w)| (d + 0.5 * w).norm()).fold(0.0, f64::max);
    Ok(PhaseField { grid: grid.clone(), values, dbar, w, residual })
}

/// Per-point terms of `P_ρ a = T₀ + h T₁ + h² T₂`.
#[derive(Clone, Copy, Debug)]
pub struct ConjugatedTerms {
    /// `−⟨∇ρ, ∇ρ⟩ a`
    pub t0: Complex64,
    /// `2⟨∇ρ, ∇a⟩ + (Δρ) a`
    pub t1: Complex64,
    /// `−Δa + q a`
    pub t2: Complex64,
}

impl ConjugatedTerms {
    pub fn at_h(&self, h: f64) -> Complex64 {
        self.t0 + h * self.t1 + h * h * self.t2
    }
}

/// Termwise conjugated operator at one point for `ρ = x₁ + i k r`.
pub fn conjugated_terms(
    metric: &ChartMetric,
    a: &CExpr,
    q_polar: &CExpr,
    phase_scale: f64,
    p: &[f64],
) -> Result<ConjugatedTerms> {
    let mj = metric.jets(p, 1)?;
    let aj = a.jet(p, 2);
    let av = aj.value();
    let d = drho(phase_scale);
    let mut grad_rho2 = Complex64::new(0.0, 0.0);
    let mut pair = Complex64::new(0.0, 0.0);
    for j in 0..3 {
        for k in 0..3 {
            let gi = mj.ginv[j * 3 + k].value();
            grad_rho2 += gi * d[j] * d[k];
            pair += gi * d[j] * aj.d(k);
        }
    }
    let lap_x1 = laplacian_of_jet(&mj, &Expr::var(0).jet(p, 2));
    let lap_r = laplacian_of_jet(&mj, &Expr::var(1).jet(p, 2));
    let lap_rho = Complex64::new(lap_x1, phase_scale * lap_r);
    let lap_a = Complex64::new(laplacian_of_jet(&mj, &aj.re), laplacian_of_jet(&mj, &aj.im));
    Ok(ConjugatedTerms { t0: -grad_rho2 * av, t1: 2.0 * pair + lap_rho * av, t2: -lap_a + q_polar.at(p) * av })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanReport {
    pub h: Vec<f64>,
    /// Grid root-mean-square of `P_ρ a` per `h`.
    pub norms: Vec<f64>,
    /// Least-squares slope of `log‖P_ρ a‖` against `log h`.
    pub slope: f64,
    /// `max |(‖P_ρ a‖/h²) / mean − 1|`.
    pub normalized_spread: f64,
    /// Grid root-mean-square of `L_{g,q} a`.
    pub source_norm: f64,
}

/// `‖e^{ρ/h} h² L_{g,q}(e^{−ρ/h} a)‖` over the grid for each `h`, with `q`
/// given in product coordinates.
pub fn residual_scan(
    am: &AdmissibleMetric,
    q: &CExpr,
    amp: &CgoAmplitude,
    phase_scale: f64,
    h_list: &[f64],
    grid: &CgoGrid,
) -> Result<ScanReport> {
    if h_list.is_empty() {
        return Err(Error::InvalidParameters("empty h list".into()));
    }
    if h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidParameters("h values must be positive".into()));
    }
    if amp.magnetic.is_some() {
        return Err(Error::InvalidParameters("the scan uses the non-magnetic operator".into()));
    }
    grid.validate(am)?;
    let metric = am.assemble()?;
    let a = amp.base_expr(am);
    let qp = am.to_polar(q);
    let terms: Vec<ConjugatedTerms> =
        grid.points().par_iter().map(|p| conjugated_terms(&metric, &a, &qp, phase_scale, p)).collect::<Result<_>>()?;
    let n = terms.len() as f64;
    let rms = |f: &dyn Fn(&ConjugatedTerms) -> Complex64| (terms.iter().map(|t| f(t).norm_sqr()).sum::<f64>() / n).sqrt();
    let norms: Vec<f64> = h_list.iter().map(|h| rms(&|t| t.at_h(*h))).collect();
    let lx: Vec<f64> = h_list.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let slope = if h_list.len() < 2 {
        f64::NAN
    } else {
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    };
    let ratios: Vec<f64> = norms.iter().zip(h_list).map(|(v, h)| v / (h * h)).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let normalized_spread = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
    Ok(ScanReport { h: h_list.to_vec(), norms, slope, normalized_spread, source_norm: rms(&|t| t.t2) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> CgoGrid {
        CgoGrid { x1: [-0.5, 0.5], r: [0.3, 0.9], n_x1: n, n_r: n, thetas: vec![0.3, 2.0] }
    }

    #[test]
    fn flat_product_is_polar_euclidean() {
        let am = AdmissibleMetric::new(Expr::one(), 0.0, [0.0, 0.0], 1.0).unwrap();
        let g = am.assemble().unwrap();
        let v = g.value(&[0.1, 0.7, 1.2]).unwrap();
        assert!((v[(0, 0)] - 1.0).abs() < 1e-14 && (v[(1, 1)] - 1.0).abs() < 1e-14);
        assert!((v[(2, 2)] - 0.49).abs() < 1e-14 && v[(1, 2)].abs() < 1e-14);
    }

    #[test]
    fn cell_integral_matches_quadrature() {
        let (gx, gw) = crate::linalg::gauss_legendre(40);
        for d in [Complex64::new(0.1, 0.0), Complex64::new(0.1, 0.1), Complex64::new(-0.3, 0.2), Complex64::new(0.0, -0.1)] {
            let (hx, hy) = (0.1, 0.1);
            let mut s = Complex64::new(0.0, 0.0);
            for (xa, wa) in gx.iter().zip(&gw) {
                for (ya, wb) in gx.iter().zip(&gw) {
                    let u = d + Complex64::new(0.5 * hx * xa, 0.5 * hy * ya);
                    s += 1.0 / u * (0.25 * hx * hy * wa * wb);
                }
            }
            assert!((cell_integral(d, hx, hy) - s).norm() < 1e-9, "{d}");
        }
    }

    #[test]
    fn unit_amplitude_flat_closed_form() {
        let am = AdmissibleMetric::new(Expr::one(), 0.0, [0.0, 0.0], 1.0).unwrap();
        let amp = CgoAmplitude::new(CExpr::one(), CExpr::one());
        let p = [0.2, 0.5, 0.0];
        assert!((amp.base_expr(&am).at(&p).re - 0.5f64.powf(-0.5)).abs() < 1e-14);
        let rep = transport_residual(&am, &amp, &grid(6)).unwrap();
        assert!(rep.residual <= 1e-8, "{rep:?}");
    }
}
