//! Geodesics on compact surfaces with boundary: exit times, fans over the
//! inward boundary bundle, polar normal coordinates, boundary convexity,
//! conjugate points and the attenuated index form.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{gaussian_curvature, ChartMetric, ScalarField};
use crate::linalg;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Largest dimension handled by the fixed-size geodesic integrator.
pub const MAX_DIM: usize = 4;

/// Root tolerance for locating boundary crossings.
pub const ROOT_TOL: f64 = 1e-12;

/// Position and velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub x: [f64; MAX_DIM],
    pub v: [f64; MAX_DIM],
}

impl State {
    pub fn new(x: &[f64], v: &[f64]) -> State {
        let mut s = State { x: [0.0; MAX_DIM], v: [0.0; MAX_DIM] };
        s.x[..x.len()].copy_from_slice(x);
        s.v[..v.len()].copy_from_slice(v);
        s
    }
}

fn accel(metric: &ChartMetric, x: &[f64; MAX_DIM], v: &[f64; MAX_DIM], gam: &mut [f64]) -> Result<[f64; MAX_DIM]> {
    let n = metric.dim();
    let mut a = [0.0; MAX_DIM];
    if metric.is_constant() {
        return Ok(a);
    }
    metric.christoffel_into(&x[..n], gam)?;
    for l in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            for k in 0..n {
                s += gam[(l * n + j) * n + k] * v[j] * v[k];
            }
        }
        a[l] = -s;
    }
    Ok(a)
}

/// One classical RK4 step of `ẍ^l + Γ^l_{jk} ẋ^j ẋ^k = 0`.
pub fn rk4_step(metric: &ChartMetric, s: &State, h: f64) -> Result<State> {
    let n = metric.dim();
    if metric.is_constant() {
        let mut o = *s;
        for i in 0..n {
            o.x[i] += h * s.v[i];
        }
        return Ok(o);
    }
    let mut gam = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
    let shift = |base: &[f64; MAX_DIM], d: &[f64; MAX_DIM], c: f64| {
        let mut o = *base;
        for i in 0..n {
            o[i] += c * d[i];
        }
        o
    };
    let k1x = s.v;
    let k1v = accel(metric, &s.x, &s.v, &mut gam)?;
    let x2 = shift(&s.x, &k1x, 0.5 * h);
    let v2 = shift(&s.v, &k1v, 0.5 * h);
    let k2v = accel(metric, &x2, &v2, &mut gam)?;
    let x3 = shift(&s.x, &v2, 0.5 * h);
    let v3 = shift(&s.v, &k2v, 0.5 * h);
    let k3v = accel(metric, &x3, &v3, &mut gam)?;
    let x4 = shift(&s.x, &v3, h);
    let v4 = shift(&s.v, &k3v, h);
    let k4v = accel(metric, &x4, &v4, &mut gam)?;
    let mut o = *s;
    for i in 0..n {
        o.x[i] += h / 6.0 * (k1x[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        o.v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    Ok(o)
}

/// Geodesic flow for time `t` with `steps` RK4 steps, ignoring any boundary.
pub fn geodesic_flow(metric: &ChartMetric, x: &[f64], v: &[f64], t: f64, steps: usize) -> Result<State> {
    let mut s = State::new(x, v);
    let h = t / steps.max(1) as f64;
    for _ in 0..steps.max(1) {
        s = rk4_step(metric, &s, h)?;
    }
    Ok(s)
}

/// Compact surface with boundary `β = 0`, `β > 0` inside.
#[derive(Clone, Debug)]
pub struct SimpleManifold {
    pub metric: ChartMetric,
    pub beta: Expr,
    /// Default RK4 step.
    pub step: f64,
    /// Centre from which the boundary is star shaped.
    pub center: Vec<f64>,
    pub diagnostics: Option<Diagnostics>,
}

/// Numerical simplicity surrogate.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub min_boundary_curvature: f64,
    pub conjugate_free: bool,
    pub polar_ok: bool,
    pub is_simple: bool,
}

impl SimpleManifold {
    pub fn new(metric: ChartMetric, beta: Expr) -> Result<SimpleManifold> {
        if metric.dim() != 2 {
            return Err(Error::Dimension("simple manifolds here are surfaces".into()));
        }
        let side = metric.chart.lo.iter().zip(&metric.chart.hi).map(|(a, b)| b - a).fold(0.0f64, f64::max);
        let center: Vec<f64> = metric.chart.lo.iter().zip(&metric.chart.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        if !(beta.at(&center) > 0.0) {
            return Err(Error::InvalidParameters("chart centre must lie inside M".into()));
        }
        Ok(SimpleManifold { metric, beta, step: side / 2000.0, center, diagnostics: None })
    }

    pub fn with_step(mut self, step: f64) -> SimpleManifold {
        self.step = step;
        self
    }

    pub fn with_center(mut self, c: Vec<f64>) -> SimpleManifold {
        self.center = c;
        self
    }

    pub fn beta_at(&self, x: &[f64]) -> f64 {
        self.beta.at(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.metric.chart.in_box(x) && self.beta_at(x) > 0.0
    }

    pub fn norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.metric.value(x)?;
        Ok((g[(0, 0)] * v[0] * v[0] + 2.0 * g[(0, 1)] * v[0] * v[1] + g[(1, 1)] * v[1] * v[1]).sqrt())
    }

    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.metric.value(x)?;
        Ok(g[(0, 0)] * u[0] * v[0] + g[(0, 1)] * (u[0] * v[1] + u[1] * v[0]) + g[(1, 1)] * u[1] * v[1])
    }

    /// Rescales `v` to unit length.
    pub fn unit(&self, x: &[f64], v: &[f64]) -> Result<[f64; 2]> {
        let n = self.norm(x, v)?;
        Ok([v[0] / n, v[1] / n])
    }

    /// Inward unit normal (the g-gradient of β, normalized) and the unit tangent
    /// obtained by rotating it clockwise in a g-orthonormal sense.
    pub fn boundary_frame(&self, x: &[f64]) -> Result<([f64; 2], [f64; 2])> {
        let d = self.beta.dual(x);
        let ginv = self.metric.inverse(x)?;
        let gb = [ginv[(0, 0)] * d.d[0] + ginv[(0, 1)] * d.d[1], ginv[(1, 0)] * d.d[0] + ginv[(1, 1)] * d.d[1]];
        let nn = (gb[0] * d.d[0] + gb[1] * d.d[1]).sqrt();
        if !(nn > 1e-12) {
            return Err(Error::Degenerate(format!("boundary gradient vanishes at {x:?}")));
        }
        let nu = [gb[0] / nn, gb[1] / nn];
        // Tangent: kernel of dβ, g-normalized, oriented counterclockwise.
        let t0 = [-d.d[1], d.d[0]];
        let t = self.unit(x, &t0)?;
        Ok((nu, t))
    }
}

/// Discretized geodesic with uniform samples in `[0, τ]` (an even number of steps).
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub t: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    pub tau: f64,
    pub entered_at_boundary: bool,
}

impl GeodesicPath {
    pub fn steps(&self) -> usize {
        self.t.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.steps() as f64
    }

    pub fn exit_point(&self) -> [f64; 2] {
        *self.x.last().expect("nonempty path")
    }

    pub fn exit_velocity(&self) -> [f64; 2] {
        *self.v.last().expect("nonempty path")
    }

    /// Cubic Hermite position at time `t`.
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        let h = self.dt();
        let k = ((t / h).floor() as usize).min(self.steps() - 1);
        let s = (t - k as f64 * h) / h;
        let (h00, h10, h01, h11) =
            (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        let mut o = [0.0; 2];
        for i in 0..2 {
            o[i] = h00 * self.x[k][i] + h10 * h * self.v[k][i] + h01 * self.x[k + 1][i] + h11 * h * self.v[k + 1][i];
        }
        o
    }

    /// CSV rows `t, x1, x2, v1, v2`.
    pub fn rows(&self) -> Vec<[f64; 5]> {
        (0..self.t.len()).map(|k| [self.t[k], self.x[k][0], self.x[k][1], self.v[k][0], self.v[k][1]]).collect()
    }
}

/// Integrates the unit-speed geodesic from `(x0, v0)` until it leaves `M`.
pub fn integrate_geodesic(m: &SimpleManifold, x0: &[f64], v0: &[f64], step: Option<f64>) -> Result<GeodesicPath> {
    let h = step.unwrap_or(m.step);
    if !(h > 0.0) {
        return Err(Error::InvalidParameters("step must be positive".into()));
    }
    let speed = m.norm(x0, v0)?;
    if (speed - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameters(format!("initial velocity has length {speed}")));
    }
    let b0 = m.beta_at(x0);
    let on_boundary = b0.abs() < 1e-10;
    if on_boundary {
        let d = m.beta.dual(x0);
        if d.d[0] * v0[0] + d.d[1] * v0[1] <= 0.0 {
            return Err(Error::OutwardDirection);
        }
    } else if b0 < 0.0 {
        return Err(Error::NotInterior(x0.to_vec()));
    }
    let diam = m.metric.chart.lo.iter().zip(&m.metric.chart.hi).map(|(a, b)| b - a).sum::<f64>();
    let budget = ((1000.0 * diam / h).ceil() as usize).max(100_000);
    let mut s = State::new(x0, v0);
    let mut k = 0usize;
    let tau = loop {
        let next = rk4_step(&m.metric, &s, h)?;
        let bx = if m.metric.chart.in_box(&next.x[..2]) { m.beta_at(&next.x[..2]) } else { f64::NAN };
        if !(bx > 0.0) {
            // Bisection on the partial step.
            let f = |sub: f64| -> Result<f64> {
                let st = rk4_step(&m.metric, &s, sub)?;
                Ok(m.beta_at(&st.x[..2]))
            };
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid)?;
                if fm.is_nan() {
                    return Err(Error::Degenerate("geodesic left the chart".into()));
                }
                if fm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if fm.abs() < ROOT_TOL || hi - lo < 1e-15 {
                    break;
                }
            }
            break k as f64 * h + 0.5 * (lo + hi);
        }
        s = next;
        k += 1;
        if k > budget {
            return Err(Error::Trapped);
        }
    };
    if !(tau > 0.0) {
        return Err(Error::OutwardDirection);
    }
    let mut steps = (tau / h).ceil() as usize;
    steps = steps.max(2);
    if steps % 2 == 1 {
        steps += 1;
    }
    let dt = tau / steps as f64;
    let mut path = GeodesicPath {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
        tau,
        entered_at_boundary: on_boundary,
    };
    let mut s = State::new(x0, v0);
    for i in 0..=steps {
        path.t.push(i as f64 * dt);
        path.x.push([s.x[0], s.x[1]]);
        path.v.push([s.v[0], s.v[1]]);
        if i < steps {
            s = rk4_step(&m.metric, &s, dt)?;
        }
    }
    Ok(path)
}

/// Radius of the boundary along the Euclidean ray from the centre at angle `psi`.
pub fn boundary_radius(m: &SimpleManifold, psi: f64) -> Result<f64> {
    let c = &m.center;
    let dir = [psi.cos(), psi.sin()];
    let at = |r: f64| [c[0] + r * dir[0], c[1] + r * dir[1]];
    let mut hi = 1e-3;
    let max_r = m.metric.chart.lo.iter().zip(&m.metric.chart.hi).map(|(a, b)| b - a).sum::<f64>();
    let mut lo = 0.0;
    while m.metric.chart.in_box(&at(hi)) && m.beta_at(&at(hi)) > 0.0 {
        lo = hi;
        hi *= 1.25;
        if hi > max_r {
            return Err(Error::Degenerate("boundary not found along ray".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = at(mid);
        if m.metric.chart.in_box(&p) && m.beta_at(&p) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn boundary_point(m: &SimpleManifold, psi: f64) -> Result<[f64; 2]> {
    let r = boundary_radius(m, psi)?;
    Ok([m.center[0] + r * psi.cos(), m.center[1] + r * psi.sin()])
}

/// Boundary curve parametrized by the centre angle, with a cumulative metric
/// arclength table for inversion.
pub struct BoundaryCurve {
    psi: Vec<f64>,
    cum: Vec<f64>,
    pub length: f64,
}

impl BoundaryCurve {
    pub fn new(m: &SimpleManifold, cells: usize) -> Result<BoundaryCurve> {
        let (gx, gw) = linalg::gauss_legendre(4);
        let dpsi = 2.0 * PI / cells as f64;
        let speed = |psi: f64| -> Result<f64> {
            let e = 1e-6;
            let a = boundary_point(m, psi - e)?;
            let b = boundary_point(m, psi + e)?;
            let mid = boundary_point(m, psi)?;
            m.norm(&mid, &[(b[0] - a[0]) / (2.0 * e), (b[1] - a[1]) / (2.0 * e)])
        };
        let psi: Vec<f64> = (0..=cells).map(|i| i as f64 * dpsi).collect();
        let seg: Vec<f64> = (0..cells)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for (x, w) in gx.iter().zip(&gw) {
                    s += w * 0.5 * dpsi * speed(psi[i] + 0.5 * dpsi * (1.0 + x))?;
                }
                Ok(s)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut cum = vec![0.0];
        for s in seg {
            cum.push(cum.last().unwrap() + s);
        }
        let length = *cum.last().unwrap();
        Ok(BoundaryCurve { psi, cum, length })
    }

    /// Centre angle at which the arclength from angle 0 equals `s`.
    pub fn psi_at(&self, s: f64) -> f64 {
        let i = self.cum.partition_point(|c| *c <= s).clamp(1, self.cum.len() - 1) - 1;
        let frac = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]);
        self.psi[i] + frac * (self.psi[i + 1] - self.psi[i])
    }
}

/// One ray of a fan over the inward boundary bundle.
#[derive(Clone, Debug)]
pub struct FanRay {
    pub boundary_index: usize,
    pub angle_index: usize,
    pub point: [f64; 2],
    /// Angle from the inward normal.
    pub alpha: f64,
    pub direction: [f64; 2],
    pub path: GeodesicPath,
}

/// Rays `(x_i, α_j)` with boundary-arclength and angle quadrature weights.
#[derive(Clone, Debug)]
pub struct Fan {
    pub rays: Vec<FanRay>,
    pub n_boundary: usize,
    pub n_angles: usize,
    pub boundary_weight: f64,
    pub angle_weight: f64,
    pub delta: f64,
}

/// Guard angle that keeps fan rays away from grazing directions.
pub const GRAZING_GUARD: f64 = 0.01;

/// Boundary points at arclength midpoints and angles at midpoints of
/// `(−π/2 + δ, π/2 − δ)`.
pub fn build_fan(m: &SimpleManifold, n_boundary: usize, n_angles: usize, delta: f64, step: Option<f64>) -> Result<Fan> {
    if n_boundary == 0 || n_angles == 0 {
        return Err(Error::InvalidParameters("fan needs at least one boundary point and angle".into()));
    }
    let curve = BoundaryCurve::new(m, 2048.max(4 * n_boundary))?;
    let wb = curve.length / n_boundary as f64;
    let span = PI - 2.0 * delta;
    let wa = span / n_angles as f64;
    let jobs: Vec<(usize, usize)> = (0..n_boundary).flat_map(|i| (0..n_angles).map(move |j| (i, j))).collect();
    let rays = jobs
        .into_par_iter()
        .map(|(i, j)| {
            let psi = curve.psi_at((i as f64 + 0.5) * wb);
            let p = boundary_point(m, psi)?;
            let alpha = -PI / 2.0 + delta + (j as f64 + 0.5) * wa;
            let (nu, t) = m.boundary_frame(&p)?;
            let d = [alpha.cos() * nu[0] + alpha.sin() * t[0], alpha.cos() * nu[1] + alpha.sin() * t[1]];
            let d = m.unit(&p, &d)?;
            let path = integrate_geodesic(m, &p, &d, step)?;
            Ok(FanRay { boundary_index: i, angle_index: j, point: p, alpha, direction: d, path })
        })
        .collect::<Result<Vec<FanRay>>>()?;
    Ok(Fan { rays, n_boundary, n_angles, boundary_weight: wb, angle_weight: wa, delta })
}

/// Minimum boundary curvature `ℓ(T,T) = −D²β(T,T)/|∇β|` (outward normal) over
/// `samples` points spaced uniformly in arclength starting at centre angle 0.
pub fn boundary_convexity(m: &SimpleManifold, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidParameters("need at least one sample".into()));
    }
    let curve = BoundaryCurve::new(m, 2048.max(4 * samples))?;
    let beta = crate::geometry::ScalarField::real(2, m.beta.clone());
    let mut kmin = f64::INFINITY;
    for i in 0..samples {
        let p = boundary_point(m, curve.psi_at(i as f64 * curve.length / samples as f64))?;
        let rep = crate::geometry::grad_hessian(&m.metric, &beta, &p)?;
        let (_, t) = m.boundary_frame(&p)?;
        let g = m.metric.value(&p)?;
        let gr = nalgebra::Vector2::new(rep.gradient[0], rep.gradient[1]);
        let gn = (gr.transpose() * g.fixed_view::<2, 2>(0, 0) * gr)[(0, 0)].sqrt();
        let h = &rep.hessian;
        let htt = h[(0, 0)] * t[0] * t[0] + 2.0 * h[(0, 1)] * t[0] * t[1] + h[(1, 1)] * t[1] * t[1];
        kmin = kmin.min(-htt / gn);
    }
    Ok(kmin)
}

/// Gaussian curvature with the constant-metric fast path.
pub fn curvature_at(m: &ChartMetric, x: &[f64]) -> Result<f64> {
    if m.is_constant() {
        Ok(0.0)
    } else {
        gaussian_curvature(m, x)
    }
}

/// First zero in `(0, τ]` of the normal Jacobi field `y'' + K y = 0`,
/// `y(0) = 0`, `y'(0) = 1`.
pub fn conjugate_point_scan(m: &SimpleManifold, path: &GeodesicPath) -> Result<Option<f64>> {
    if m.metric.is_constant() {
        return Ok(None);
    }
    let k: Vec<f64> = path.x.iter().map(|p| curvature_at(&m.metric, p)).collect::<Result<_>>()?;
    let h = 2.0 * path.dt();
    let (mut y, mut yp) = (0.0f64, 1.0f64);
    let mut j = 0;
    while j + 2 < path.t.len() {
        let (k0, k1, k2) = (k[j], k[j + 1], k[j + 2]);
        let f = |kk: f64, y: f64| -kk * y;
        let (a1y, a1p) = (yp, f(k0, y));
        let (a2y, a2p) = (yp + 0.5 * h * a1p, f(k1, y + 0.5 * h * a1y));
        let (a3y, a3p) = (yp + 0.5 * h * a2p, f(k1, y + 0.5 * h * a2y));
        let (a4y, a4p) = (yp + h * a3p, f(k2, y + h * a3y));
        let ny = y + h / 6.0 * (a1y + 2.0 * a2y + 2.0 * a3y + a4y);
        let np = yp + h / 6.0 * (a1p + 2.0 * a2p + 2.0 * a3p + a4p);
        if ny <= 0.0 {
            // Hermite interpolant on [t_j, t_j + h], then bisection.
            let herm = |s: f64| {
                let (h00, h10, h01, h11) =
                    (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
                h00 * y + h10 * h * yp + h01 * ny + h11 * h * np
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if herm(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(path.t[j] + 0.5 * (lo + hi) * h));
        }
        y = ny;
        yp = np;
        j += 2;
    }
    Ok(None)
}

/// Smallest eigenvalue of the attenuated index form on a geodesic.
#[derive(Clone, Debug, Serialize)]
pub struct IndexFormReport {
    pub lambda1: f64,
    pub grid: usize,
    /// Change of `lambda1` when the grid is doubled.
    pub refinement_delta: f64,
    pub epsilon_fan: Option<f64>,
}

/// Grid settings for [`index_min_eig`].
#[derive(Clone, Copy, Debug)]
pub struct IndexConfig {
    pub grid: usize,
    /// Allowed relative change of `lambda1` under grid doubling.
    pub refine_rtol: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig { grid: 400, refine_rtol: 1e-3 }
    }
}

fn index_eig_on_grid(m: &SimpleManifold, path: &GeodesicPath, a: &ScalarField, n: usize) -> Result<f64> {
    let dt = path.tau / (n + 1) as f64;
    let attn = a.real_part()?;
    let (va, vk): (Vec<f64>, Vec<f64>) = (1..=n)
        .map(|i| {
            let p = path.position_at(i as f64 * dt);
            let av = attn.at(&p);
            let kv = curvature_at(&m.metric, &p)?;
            Ok((av * av, kv))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?
        .into_iter()
        .unzip();
    let off = vec![-1.0 / (dt * dt); n.saturating_sub(1)];
    let tangential: Vec<f64> = va.iter().map(|a2| 2.0 / (dt * dt) - a2).collect();
    let normal: Vec<f64> = va.iter().zip(&vk).map(|(a2, k)| 2.0 / (dt * dt) - k - a2).collect();
    Ok(linalg::tridiagonal_min_eigenvalue(&tangential, &off).min(linalg::tridiagonal_min_eigenvalue(&normal, &off)))
}

/// Dirichlet finite-difference discretization of `−D² − R_γ − a²` along `path`.
pub fn index_min_eig(m: &SimpleManifold, path: &GeodesicPath, a: &ScalarField, cfg: &IndexConfig) -> Result<IndexFormReport> {
    if cfg.grid < 3 {
        return Err(Error::InvalidParameters("index grid too small".into()));
    }
    let l1 = index_eig_on_grid(m, path, a, cfg.grid)?;
    let l2 = index_eig_on_grid(m, path, a, 2 * cfg.grid)?;
    let delta = (l2 - l1).abs();
    if delta > cfg.refine_rtol * l2.abs().max(1e-12) {
        return Err(Error::Refinement(format!("lambda1 changed by {delta:e} under refinement")));
    }
    Ok(IndexFormReport { lambda1: l1, grid: cfg.grid, refinement_delta: delta, epsilon_fan: None })
}

/// Index form over a fan; `epsilon_fan` is the minimum `lambda1`.
pub fn index_over_fan(m: &SimpleManifold, fan: &Fan, a: &ScalarField, cfg: &IndexConfig) -> Result<IndexFormReport> {
    let reps: Vec<IndexFormReport> =
        fan.rays.par_iter().map(|r| index_min_eig(m, &r.path, a, cfg)).collect::<Result<_>>()?;
    let mut best = reps.into_iter().min_by(|a, b| a.lambda1.total_cmp(&b.lambda1)).ok_or_else(|| Error::InvalidParameters("empty fan".into()))?;
    best.epsilon_fan = Some(best.lambda1);
    Ok(best)
}

/// Geodesic polar coordinates `x′ = exp_ω(r θ)` about an interior point.
#[derive(Clone, Debug)]
pub struct PolarNormal {
    metric: ChartMetric,
    pub omega: [f64; 2],
    /// Columns: g-orthonormal frame at ω.
    frame: DMatrix<f64>,
    step: f64,
}

impl PolarNormal {
    fn direction(&self, theta: f64) -> [f64; 2] {
        let (c, s) = (theta.cos(), theta.sin());
        [self.frame[(0, 0)] * c + self.frame[(0, 1)] * s, self.frame[(1, 0)] * c + self.frame[(1, 1)] * s]
    }

    fn shoot(&self, r: f64, theta: f64) -> Result<State> {
        let d = self.direction(theta);
        let steps = ((r.abs() / self.step).ceil() as usize).max(1);
        geodesic_flow(&self.metric, &self.omega, &d, r, steps)
    }

    /// `exp_ω(r θ)`.
    pub fn exp(&self, r: f64, theta: f64) -> Result<[f64; 2]> {
        let s = self.shoot(r, theta)?;
        Ok([s.x[0], s.x[1]])
    }

    fn d_theta(&self, r: f64, theta: f64) -> Result<[f64; 2]> {
        let e = 1e-5;
        let a = self.exp(r, theta + e)?;
        let b = self.exp(r, theta - e)?;
        Ok([(a[0] - b[0]) / (2.0 * e), (a[1] - b[1]) / (2.0 * e)])
    }

    fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.metric.value(x)?;
        Ok(g[(0, 0)] * u[0] * v[0] + g[(0, 1)] * (u[0] * v[1] + u[1] * v[0]) + g[(1, 1)] * u[1] * v[1])
    }

    /// Angular metric coefficient `m(r, θ) = |∂_θ|²`.
    pub fn m(&self, r: f64, theta: f64) -> Result<f64> {
        let x = self.exp(r, theta)?;
        let t = self.d_theta(r, theta)?;
        self.inner(&x, &t, &t)
    }

    /// `(|∂_r|_g, g(∂_r, ∂_θ), m)` at `(r, θ)`.
    pub fn metric_entries(&self, r: f64, theta: f64) -> Result<(f64, f64, f64)> {
        let s = self.shoot(r, theta)?;
        let x = [s.x[0], s.x[1]];
        let dr = [s.v[0], s.v[1]];
        let dt = self.d_theta(r, theta)?;
        Ok((self.inner(&x, &dr, &dr)?.sqrt(), self.inner(&x, &dr, &dt)?, self.inner(&x, &dt, &dt)?))
    }

    /// Inverse map `x′ ↦ (r, θ)` by Newton iteration.
    pub fn to_polar(&self, x: &[f64]) -> Result<(f64, f64)> {
        let w = &self.omega;
        let dx = nalgebra::Vector2::new(x[0] - w[0], x[1] - w[1]);
        // Initial guess from the frame at ω.
        let fi = self.frame.clone().try_inverse().ok_or_else(|| Error::Degenerate("frame".into()))?;
        let c = fi.fixed_view::<2, 2>(0, 0) * dx;
        let mut r = c.norm();
        if r < 1e-14 {
            return Ok((0.0, 0.0));
        }
        let mut th = c[1].atan2(c[0]);
        for _ in 0..50 {
            let s = self.shoot(r, th)?;
            let res = nalgebra::Vector2::new(s.x[0] - x[0], s.x[1] - x[1]);
            if res.norm() < 1e-13 * (1.0 + r) {
                return Ok((r, th));
            }
            let dt = self.d_theta(r, th)?;
            let jac = nalgebra::Matrix2::new(s.v[0], dt[0], s.v[1], dt[1]);
            let step = jac.try_inverse().ok_or_else(|| Error::ConjugatePoint(format!("singular polar map at {x:?}")))? * res;
            r -= step[0];
            th -= step[1];
            if r < 0.0 {
                r = -r;
                th += PI;
            }
        }
        Err(Error::NonConvergence(format!("polar coordinates of {x:?}")))
    }
}

/// Builds polar normal coordinates about `omega`, rejecting centres from which
/// a conjugate point is reached before the boundary.
pub fn polar_normal(m: &SimpleManifold, omega: &[f64]) -> Result<PolarNormal> {
    if !m.contains(omega) {
        return Err(Error::NotInterior(omega.to_vec()));
    }
    let frame = m.metric.orthonormal_frame(omega)?;
    let pn = PolarNormal { metric: m.metric.clone(), omega: [omega[0], omega[1]], frame, step: m.step };
    if !m.metric.is_constant() {
        for k in 0..16 {
            let d = pn.direction(2.0 * PI * k as f64 / 16.0);
            let path = integrate_geodesic(m, omega, &d, None)?;
            if let Some(t) = conjugate_point_scan(m, &path)? {
                return Err(Error::ConjugatePoint(format!("conjugate to centre at t = {t}")));
            }
        }
    }
    Ok(pn)
}

/// Convexity, conjugate-point and polar-coordinate checks.
pub fn diagnose(m: &SimpleManifold, fan_size: usize) -> Result<Diagnostics> {
    let kmin = boundary_convexity(m, 64)?;
    let fan = build_fan(m, fan_size, fan_size, GRAZING_GUARD, None)?;
    let mut conjugate_free = true;
    for r in &fan.rays {
        if conjugate_point_scan(m, &r.path)?.is_some() {
            conjugate_free = false;
            break;
        }
    }
    let mut polar_ok = true;
    for k in 0..8 {
        let psi = 2.0 * PI * k as f64 / 8.0;
        let rb = boundary_radius(m, psi)?;
        let c = [m.center[0] + 0.5 * rb * psi.cos(), m.center[1] + 0.5 * rb * psi.sin()];
        if polar_normal(m, &c).is_err() {
            polar_ok = false;
        }
    }
    Ok(Diagnostics { min_boundary_curvature: kmin, conjugate_free, polar_ok, is_simple: kmin > 0.0 && conjugate_free && polar_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders;

    #[test]
    fn diameter_chord() {
        let m = builders::flat_disc(1.0);
        let p = integrate_geodesic(&m, &[1.0, 0.0], &[-1.0, 0.0], None).unwrap();
        assert!((p.tau - 2.0).abs() < 1e-11);
        assert!((p.exit_point()[0] + 1.0).abs() < 1e-11);
    }

    #[test]
    fn inclined_chord() {
        let m = builders::flat_disc(1.0);
        let a: f64 = 0.7;
        let p = integrate_geodesic(&m, &[1.0, 0.0], &[-a.cos(), a.sin()], None).unwrap();
        assert!((p.tau - 2.0 * a.cos()).abs() < 1e-11);
    }

    #[test]
    fn outward_direction_is_rejected() {
        let m = builders::flat_disc(1.0);
        assert_eq!(integrate_geodesic(&m, &[1.0, 0.0], &[1.0, 0.0], None).unwrap_err(), Error::OutwardDirection);
    }

    #[test]
    fn disc_and_ellipse_convexity() {
        assert!((boundary_convexity(&builders::flat_disc(1.0), 32).unwrap() - 1.0).abs() < 1e-9);
        assert!((boundary_convexity(&builders::ellipse(2.0, 1.0), 64).unwrap() - 0.25).abs() < 1e-9);
        assert!(boundary_convexity(&builders::peanut(), 64).unwrap() < 0.0);
    }

    #[test]
    fn flat_index_form() {
        let m = builders::flat_disc(1.0);
        let p = integrate_geodesic(&m, &[1.0, 0.0], &[-1.0, 0.0], None).unwrap();
        let zero = ScalarField::constant(2, 0.0);
        let r = index_min_eig(&m, &p, &zero, &IndexConfig::default()).unwrap();
        assert!((r.lambda1 / (PI * PI / 4.0) - 1.0).abs() < 1e-4);
        let mu = ScalarField::constant(2, 0.3);
        let r = index_min_eig(&m, &p, &mu, &IndexConfig::default()).unwrap();
        assert!((r.lambda1 - (PI * PI / 4.0 - 0.09)).abs() < 1e-3);
    }
}
