//! Boundary determination in boundary normal coordinates.
//!
//! Coordinates are `(x', x_n)` with `x_n ≥ 0` the distance to the boundary and
//! metric `g_{αβ} dx^α dx^β + dx_n²`. The factorization of the conjugated
//! magnetic Schrödinger operator produces a symbol `b ∼ Σ_{j≤1} b_j` on
//! `(x', ξ')`; the Dirichlet-to-Neumann map has symbol `−b`. This module
//! normalizes the gauge, runs the symbol recursion, and inverts the first three
//! levels back to boundary jets of the coefficients.
//!
//! All derivatives are exact truncated Taylor jets of the coefficient
//! expressions. The symbol space has `2n − 1` variables ordered as
//! `(x'_1..x'_{n-1}, x_n, ξ'_1..ξ'_{n-1})`; symbol functions expose jets on
//! `(x', ξ')` only.

use crate::error::{Error, Result};
use crate::expr::{CExpr, CJet, Expr};
use crate::geometry::{invert_jets, OneFormField, ScalarField};
use crate::jet::{Jet, Real};
use crate::linalg::{gauss_legendre, least_squares};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Default order `J` of the gauge normalization.
pub const DEFAULT_GAUGE_ORDER: usize = 4;
/// Highest normalization order supported by [`normal_gauge`].
pub const MAX_GAUGE_ORDER: usize = 6;
/// Derivatives of `A_n` up to this total order must vanish before symbols are formed.
pub const SYMBOL_NORMALIZATION_ORDER: usize = 3;
/// Condition-number ceiling for the quadratic-form direction fits.
pub const MAX_FIT_CONDITION: f64 = 1e8;
const NORMALIZATION_TOL: f64 = 1e-8;
/// Gauss–Legendre nodes used for the `x_n` quadrature defining `h`.
const H_QUADRATURE_NODES: usize = 16;

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Coefficients `(g, A, q)` in boundary normal coordinates on the working box
/// `[lo, hi] × [0, depth]`.
#[derive(Clone, Debug)]
pub struct BoundaryCoefficients {
    pub dim: usize,
    /// Tangential block `g_{αβ}(x', x_n)`.
    pub g: Vec<Vec<Expr>>,
    pub a: OneFormField,
    pub q: ScalarField,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub depth: f64,
}

impl BoundaryCoefficients {
    pub fn new(g: Vec<Vec<Expr>>, a: OneFormField, q: ScalarField) -> Result<BoundaryCoefficients> {
        let nt = g.len();
        let dim = nt + 1;
        let bc = BoundaryCoefficients {
            dim,
            g,
            a,
            q,
            lo: vec![-1.0; nt],
            hi: vec![1.0; nt],
            depth: 0.5,
        };
        bc.validate()?;
        Ok(bc)
    }

    /// Flat half space with `A = 0` and constant `q`.
    pub fn flat(dim: usize, q: Complex64) -> Result<BoundaryCoefficients> {
        let nt = dim.saturating_sub(1);
        let g = (0..nt)
            .map(|a| (0..nt).map(|b| Expr::c(if a == b { 1.0 } else { 0.0 })).collect())
            .collect();
        BoundaryCoefficients::new(g, OneFormField::zero(dim), ScalarField::complex(dim, CExpr::c(q)))
    }

    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>, depth: f64) -> Result<BoundaryCoefficients> {
        self.lo = lo;
        self.hi = hi;
        self.depth = depth;
        self.validate()?;
        Ok(self)
    }

    pub fn tangential_dim(&self) -> usize {
        self.dim - 1
    }

    fn validate(&self) -> Result<()> {
        let nt = self.g.len();
        if self.dim < 3 {
            return Err(Error::Dimension(format!("boundary determination needs n >= 3, got {}", self.dim)));
        }
        if self.g.iter().any(|row| row.len() != nt) {
            return Err(Error::Dimension("tangential metric block is not square".into()));
        }
        if self.a.dim() != self.dim || self.q.dim != self.dim {
            return Err(Error::Dimension("coefficient dimensions disagree".into()));
        }
        if self.lo.len() != nt || self.hi.len() != nt || self.lo.iter().zip(&self.hi).any(|(a, b)| a >= b) {
            return Err(Error::InvalidParameters("malformed tangential box".into()));
        }
        if self.depth.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidParameters("box depth must be positive".into()));
        }
        for x in self.sample_points(3, 3) {
            let m = DMatrix::from_fn(nt, nt, |i, j| self.g[i][j].at(&x));
            let asym = (&m - m.transpose()).amax();
            if asym > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::InvalidParameters(format!("tangential metric not symmetric at {x:?}")));
            }
            if m.cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(x));
            }
        }
        Ok(())
    }

    /// Tensor grid with `per_axis` nodes in each tangential direction and
    /// `layers` normal levels from `0` to `depth`.
    pub fn sample_points(&self, per_axis: usize, layers: usize) -> Vec<Vec<f64>> {
        let nt = self.g.len();
        let mut out = Vec::new();
        let total = per_axis.pow(nt as u32);
        for idx in 0..total {
            let mut xp = Vec::with_capacity(nt + 1);
            let mut r = idx;
            for a in 0..nt {
                let k = r % per_axis;
                r /= per_axis;
                let t = if per_axis == 1 { 0.5 } else { k as f64 / (per_axis - 1) as f64 };
                xp.push(self.lo[a] + t * (self.hi[a] - self.lo[a]));
            }
            for l in 0..layers {
                let t = if layers == 1 { 0.0 } else { l as f64 / (layers - 1) as f64 };
                let mut x = xp.clone();
                x.push(t * self.depth);
                out.push(x);
            }
        }
        out
    }

    /// Boundary point at the centre of the tangential box.
    pub fn centre(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Full `n × n` metric `g_{αβ} ⊕ 1`.
    pub fn full_metric(&self) -> Vec<Vec<Expr>> {
        let nt = self.g.len();
        (0..self.dim)
            .map(|j| {
                (0..self.dim)
                    .map(|k| {
                        if j < nt && k < nt {
                            self.g[j][k].clone()
                        } else if j == k {
                            Expr::one()
                        } else {
                            Expr::zero()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Random coefficients already satisfying both normalizations:
    /// `A_n ≡ 0` and `log det g_{αβ} = λ(x') x_n`.
    pub fn random_normalized<R: Rng>(rng: &mut R, dim: usize) -> Result<BoundaryCoefficients> {
        let nt = dim - 1;
        let lambda = smooth(rng, nt, 0.5);
        let mut lower = vec![vec![Expr::zero(); nt]; nt];
        for (i, row) in lower.iter_mut().enumerate() {
            row[i] = Expr::one();
            for cell in row.iter_mut().take(i) {
                *cell = smooth(rng, dim, 0.3);
            }
        }
        let mut logs: Vec<Expr> = (0..nt - 1).map(|_| smooth(rng, dim, 0.2)).collect();
        logs.push(-Expr::sum(logs.clone()));
        let scale = (lambda * Expr::var(nt) / nt as f64).exp();
        let mut g = vec![vec![Expr::zero(); nt]; nt];
        for i in 0..nt {
            for j in 0..=i {
                let e = Expr::sum((0..nt).map(|k| lower[i][k].clone() * lower[j][k].clone() * logs[k].exp()));
                let e = scale.clone() * e;
                g[i][j] = e.clone();
                g[j][i] = e;
            }
        }
        let mut comps: Vec<CExpr> = (0..nt).map(|_| CExpr::new(smooth(rng, dim, 0.5), smooth(rng, dim, 0.3))).collect();
        comps.push(CExpr::zero());
        let q = CExpr::new(smooth(rng, dim, 1.0), smooth(rng, dim, 0.5));
        BoundaryCoefficients::new(g, OneFormField { comps }, ScalarField::complex(dim, q))
    }
}

/// Affine part plus one oscillatory term and one product term in the first
/// `nvars` coordinates, all of size `amp`.
fn smooth<R: Rng>(rng: &mut R, nvars: usize, amp: f64) -> Expr {
    let x = Expr::coords(nvars);
    let mut u = |s: f64| rng.random_range(-s..s);
    let mut e = Expr::c(amp * u(1.0));
    let mut phase = Expr::c(u(3.0));
    for xi in &x {
        e = e + xi.clone() * (amp * u(1.0));
        phase = phase + xi.clone() * u(1.5);
    }
    let a = (u(1.0).abs() * nvars as f64) as usize % nvars;
    let b = (u(1.0).abs() * nvars as f64) as usize % nvars;
    e + phase.sin() * (0.5 * amp * u(1.0)) + x[a].clone() * x[b].clone() * (0.3 * amp * u(1.0))
}

fn expr_det(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    match n {
        1 => m[0][0].clone(),
        2 => m[0][0].clone() * m[1][1].clone() - m[0][1].clone() * m[1][0].clone(),
        _ => Expr::sum((0..n).map(|c| {
            let minor: Vec<Vec<Expr>> =
                m[1..].iter().map(|row| row.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, e)| e.clone()).collect()).collect();
            let t = m[0][c].clone() * expr_det(&minor);
            if c % 2 == 0 {
                t
            } else {
                -t
            }
        })),
    }
}

fn expr_inverse(m: &[Vec<Expr>]) -> (Vec<Vec<Expr>>, Expr) {
    let n = m.len();
    let det = expr_det(m);
    let inv = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    // adj(m)_{ij} = (-1)^{i+j} M_{ji}
                    let minor: Vec<Vec<Expr>> = m
                        .iter()
                        .enumerate()
                        .filter(|(r, _)| *r != j)
                        .map(|(_, row)| row.iter().enumerate().filter(|(c, _)| *c != i).map(|(_, e)| e.clone()).collect())
                        .collect();
                    let cof = if n == 1 { Expr::one() } else { expr_det(&minor) };
                    let cof = if (i + j) % 2 == 0 { cof } else { -cof };
                    cof / det.clone()
                })
                .collect()
        })
        .collect();
    (inv, det)
}

fn cjet_of(e: &CExpr, x: &[Jet]) -> CJet {
    let re = e.re.eval(x);
    let im = if e.im.is_zero() { re.cst(0.0) } else { e.im.eval(x) };
    CJet { re, im }
}

fn max_abs_coeff(j: &CJet, max_degree: usize) -> f64 {
    let t = j.re.table();
    (0..t.len())
        .filter(|&k| t.degree(k) <= max_degree)
        .map(|k| j.re.c[k].hypot(j.im.c[k]))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Conjugation and gauge normalization
// ---------------------------------------------------------------------------

/// Result of conjugating away the normal component of `A`.
#[derive(Clone, Debug)]
pub struct Conjugation {
    /// `h(x) = −∫_0^{x_n} A_n(x', s) ds`.
    pub h: ScalarField,
    /// `Ã = A + dh` with the normal component set to zero.
    pub a_tilde: OneFormField,
    /// Largest `|A_n + ∂_n h|` over the working box before zeroing.
    pub max_normal: f64,
}

pub fn conjugation_h(bc: &BoundaryCoefficients) -> Conjugation {
    let n = bc.dim;
    let an = &bc.a.comps[n - 1];
    let h = if an.re.is_zero() && an.im.is_zero() {
        CExpr::zero()
    } else {
        let (nodes, weights) = gauss_legendre(H_QUADRATURE_NODES);
        let xn = Expr::var(n - 1);
        let mut acc = CExpr::zero();
        for (t, w) in nodes.iter().zip(&weights) {
            let s = 0.5 * (t + 1.0);
            let mut subs = Expr::coords(n);
            subs[n - 1] = xn.clone() * s;
            acc = acc + an.subst(&subs).scale(Expr::c(0.5 * w));
        }
        -acc.scale(xn)
    };
    let h = ScalarField::complex(n, h);
    let mut a_tilde = bc.a.add(&h.differential());
    let max_normal = bc
        .sample_points(5, 5)
        .iter()
        .map(|x| a_tilde.comps[n - 1].at(x).norm())
        .fold(0.0, f64::max);
    a_tilde.comps[n - 1] = CExpr::zero();
    Conjugation { h, a_tilde, max_normal }
}

/// Gauge normalization to order `J`.
#[derive(Clone, Debug)]
pub struct NormalGauge {
    pub order: usize,
    /// `μ = log c`, polynomial in `x_n` with tangential coefficients.
    pub mu: Expr,
    pub c: Expr,
    pub psi: CExpr,
    /// `(c⁻¹g, A + dψ, c(q − q_c))`.
    pub transformed: BoundaryCoefficients,
    /// Largest `|∂^K Ã_n|` with `|K| < J` at sampled boundary points.
    pub a_defect: f64,
    /// Largest `|∂_n^j log det g̃^{αβ}|`, `2 ≤ j ≤ J`, at sampled boundary points.
    pub g_defect: f64,
}

/// `[∂_n^j f](x', 0)` as an expression.
fn normal_derivative_on_boundary(f: &Expr, n: usize, j: usize) -> Expr {
    let mut d = f.clone();
    for _ in 0..j {
        d = d.diff(n - 1);
    }
    let mut subs = Expr::coords(n);
    subs[n - 1] = Expr::zero();
    d.subst(&subs)
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}

pub fn normal_gauge(bc: &BoundaryCoefficients, order: usize) -> Result<NormalGauge> {
    if order == 0 || order > MAX_GAUGE_ORDER {
        return Err(Error::InvalidParameters(format!(
            "requested gauge order {order} exceeds available jets (1..={MAX_GAUGE_ORDER})"
        )));
    }
    let n = bc.dim;
    let nt = n - 1;
    let xn = Expr::var(n - 1);
    let an = &bc.a.comps[n - 1];

    let mut psi = CExpr::zero();
    for j in 0..order {
        let dj = CExpr::new(
            normal_derivative_on_boundary(&an.re, n, j),
            normal_derivative_on_boundary(&an.im, n, j),
        );
        psi = psi - dj.scale(xn.powi(j as i32 + 1) / factorial(j + 1));
    }

    let logdet = expr_det(&bc.g).ln();
    let mut mu = Expr::zero();
    for j in 2..=order {
        let dj = normal_derivative_on_boundary(&logdet, n, j);
        mu = mu + dj * xn.powi(j as i32) / (factorial(j) * nt as f64);
    }
    let c = mu.exp();

    // q_c = d⁻¹ Δ_g d with d = e^{−sμ}, s = (n−2)/4, equals −sΔμ + s²|dμ|².
    let s = (n as f64 - 2.0) / 4.0;
    let (ginv, det) = expr_inverse(&bc.g);
    let sd = det.sqrt();
    let dmu: Vec<Expr> = (0..n).map(|j| mu.diff(j)).collect();
    let mut lap = Expr::zero();
    let mut grad2 = Expr::zero();
    for a in 0..nt {
        let flux = Expr::sum((0..nt).map(|b| sd.clone() * ginv[a][b].clone() * dmu[b].clone()));
        lap = lap + flux.diff(a);
        grad2 = grad2 + Expr::sum((0..nt).map(|b| ginv[a][b].clone() * dmu[a].clone() * dmu[b].clone()));
    }
    lap = (lap + (sd.clone() * dmu[n - 1].clone()).diff(n - 1)) / sd;
    grad2 = grad2 + dmu[n - 1].sq();
    let qc = -(lap * s) + grad2 * (s * s);

    let cinv = (-mu.clone()).exp();
    let g_t: Vec<Vec<Expr>> = bc.g.iter().map(|row| row.iter().map(|e| e.clone() * cinv.clone()).collect()).collect();
    let psi_field = ScalarField::complex(n, psi.clone());
    let a_t = bc.a.add(&psi_field.differential());
    let q_t = ScalarField::complex(n, (bc.q.value.clone() - CExpr::real(qc)).scale(c.clone()));
    let transformed = BoundaryCoefficients { g: g_t, a: a_t, q: q_t, ..bc.clone() };

    let mut a_defect = 0.0f64;
    let mut g_defect = 0.0f64;
    let mut a_scale = 0.0f64;
    for x in bc.sample_points(3, 1) {
        let vars = Jet::vars(&x, order);
        let an_t = cjet_of(&transformed.a.comps[n - 1], &vars);
        a_defect = a_defect.max(max_abs_coeff(&an_t, order - 1));
        a_scale = a_scale.max(max_abs_coeff(&cjet_of(an, &vars), order));
        let glow: Vec<Jet> = transformed.g.iter().flat_map(|row| row.iter().map(|e| e.eval(&vars))).collect();
        let (_, d) = invert_jets(nt, &glow);
        let ld = d.ln();
        for j in 2..=order {
            let mut e = vec![0u8; n];
            e[n - 1] = j as u8;
            g_defect = g_defect.max(ld.derivative(&e).abs());
        }
    }
    if a_defect > NORMALIZATION_TOL * (1.0 + a_scale) {
        return Err(Error::NotNormalized(format!("normal component jets remain {a_defect:e}")));
    }
    if g_defect > NORMALIZATION_TOL * 10.0 {
        return Err(Error::NotNormalized(format!("log-determinant jets remain {g_defect:e}")));
    }
    Ok(NormalGauge { order, mu, c, psi, transformed, a_defect, g_defect })
}

// ---------------------------------------------------------------------------
// Symbols
// ---------------------------------------------------------------------------

type SymbolEval = dyn Fn(&[f64], &[f64], usize) -> Result<CJet> + Send + Sync;

/// Symbol on `(x', ξ')` homogeneous of degree `level` in `ξ'`.
#[derive(Clone)]
pub struct SymbolFunction {
    pub level: i32,
    /// Tangential dimension `n − 1`.
    pub nt: usize,
    eval: Arc<SymbolEval>,
}

impl fmt::Debug for SymbolFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolFunction").field("level", &self.level).field("nt", &self.nt).finish()
    }
}

impl SymbolFunction {
    pub fn new<F>(level: i32, nt: usize, f: F) -> SymbolFunction
    where
        F: Fn(&[f64], &[f64], usize) -> Result<CJet> + Send + Sync + 'static,
    {
        SymbolFunction { level, nt, eval: Arc::new(f) }
    }

    /// Jet of order `order` in the `2(n−1)` variables `(x', ξ')`.
    pub fn jet(&self, xp: &[f64], xi: &[f64], order: usize) -> Result<CJet> {
        if xp.len() != self.nt || xi.len() != self.nt {
            return Err(Error::Dimension(format!("symbol expects {} tangential coordinates", self.nt)));
        }
        (self.eval)(xp, xi, order)
    }

    pub fn eval(&self, xp: &[f64], xi: &[f64]) -> Result<Complex64> {
        Ok(self.jet(xp, xi, 0)?.value())
    }

    /// `max_{t∈{2,½}} |f(tξ') − t^j f(ξ')|` relative to the magnitudes involved.
    pub fn homogeneity_defect(&self, xp: &[f64], xi: &[f64]) -> Result<f64> {
        let f0 = self.eval(xp, xi)?;
        let mut worst = 0.0f64;
        for t in [2.0, 0.5] {
            let xt: Vec<f64> = xi.iter().map(|v| v * t).collect();
            let ft = self.eval(xp, &xt)?;
            let expect = f0 * t.powi(self.level);
            let scale = ft.norm().max(expect.norm());
            let diff = (ft - expect).norm();
            if diff > 0.0 {
                worst = worst.max(diff / scale.max(1e-300));
            }
        }
        Ok(worst)
    }
}

/// Coefficient jets on the symbol space.
struct FieldJets {
    nt: usize,
    ginv: Vec<Jet>,
    glow: Vec<Jet>,
    logdet: Jet,
    at: Vec<CJet>,
    q: CJet,
    xi: Vec<Jet>,
}

impl FieldJets {
    fn zero(&self) -> Jet {
        self.xi[0].cst(0.0)
    }

    fn q2(&self) -> Jet {
        let nt = self.nt;
        let mut s = self.zero();
        for a in 0..nt {
            for b in 0..nt {
                s = s + self.ginv[a * nt + b].clone() * self.xi[a].clone() * self.xi[b].clone();
            }
        }
        s
    }

    fn e(&self) -> Jet {
        let nt = self.nt;
        let mut s = self.zero();
        for k in 0..nt * nt {
            s = s + self.glow[k].clone() * self.ginv[k].diff(nt);
        }
        s * 0.5
    }

    fn q1(&self) -> CJet {
        let nt = self.nt;
        let mut r = self.zero();
        for a in 0..nt {
            for b in 0..nt {
                let g = &self.ginv[a * nt + b];
                r = r + (g.clone() * self.logdet.diff(a) * 0.5 + g.diff(a)) * self.xi[b].clone();
            }
        }
        CJet { re: self.zero(), im: -r }
    }

    /// `2 g^{αβ} Ã_α ξ_β`.
    fn magnetic(&self) -> CJet {
        let nt = self.nt;
        let mut s = CJet::from_real(self.zero());
        for a in 0..nt {
            for b in 0..nt {
                s = s + self.at[a].scale(&(self.ginv[a * nt + b].clone() * self.xi[b].clone()));
            }
        }
        s * 2.0
    }

    /// `|g|^{-1/2} D_α(|g|^{1/2} g^{αβ} Ã_β) + g^{αβ}Ã_αÃ_β + q`.
    fn g_tilde(&self) -> CJet {
        let nt = self.nt;
        let sd = (self.logdet.clone() * 0.5).exp();
        let mut div = CJet::from_real(self.zero());
        let mut quad = CJet::from_real(self.zero());
        for a in 0..nt {
            let mut flux = CJet::from_real(self.zero());
            for b in 0..nt {
                let g = &self.ginv[a * nt + b];
                flux = flux + self.at[b].scale(&(sd.clone() * g.clone()));
                quad = quad + (self.at[a].clone() * self.at[b].clone()).scale(g);
            }
            div = div + flux.diff(a);
        }
        div.mul_c(Complex64::new(0.0, -1.0)).scale(&sd.powi(-1)) + quad + self.q.clone()
    }
}

fn field_jets(bc: &BoundaryCoefficients, xp: &[f64], xi: &[f64], order: usize) -> Result<FieldJets> {
    let n = bc.dim;
    let nt = n - 1;
    let mut base = xp.to_vec();
    base.push(0.0);
    base.extend_from_slice(xi);
    let v = Jet::vars(&base, order);
    let x = &v[..n];
    let glow: Vec<Jet> = bc.g.iter().flat_map(|row| row.iter().map(|e| e.eval(x))).collect();
    let (ginv, det) = invert_jets(nt, &glow);
    if !(det.value() > 0.0) {
        return Err(Error::NotPositiveDefinite(base[..n].to_vec()));
    }
    let an = cjet_of(&bc.a.comps[nt], x);
    let h = -an.integrate(nt);
    let at = (0..nt).map(|a| cjet_of(&bc.a.comps[a], x) + h.diff(a)).collect();
    Ok(FieldJets {
        nt,
        ginv,
        glow,
        logdet: det.ln(),
        at,
        q: cjet_of(&bc.q.value, x),
        xi: v[n..].to_vec(),
    })
}

/// Rejects coefficients whose `A_n` jets do not vanish at `(x', 0)`.
fn check_a_normalized(bc: &BoundaryCoefficients, xp: &[f64]) -> Result<()> {
    let n = bc.dim;
    let mut x = xp.to_vec();
    x.push(0.0);
    let vars = Jet::vars(&x, SYMBOL_NORMALIZATION_ORDER);
    let an = cjet_of(&bc.a.comps[n - 1], &vars);
    let scale = (0..n - 1).map(|a| max_abs_coeff(&cjet_of(&bc.a.comps[a], &vars), 0)).fold(1.0, f64::max);
    let d = max_abs_coeff(&an, SYMBOL_NORMALIZATION_ORDER);
    if d > NORMALIZATION_TOL * scale {
        return Err(Error::NotNormalized(format!("∂^K A_n = {d:e} at {x:?}")));
    }
    Ok(())
}

fn check_xi(xi: &[f64]) -> Result<()> {
    if xi.iter().all(|v| *v == 0.0) || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameters("symbols are undefined at ξ′ = 0".into()));
    }
    Ok(())
}

/// Multi-indices of length `n` and total degree `s`.
fn multi_indices(n: usize, s: usize) -> Vec<Vec<u8>> {
    fn rec(n: usize, s: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos == n - 1 {
            cur[pos] = s as u8;
            out.push(cur.clone());
            return;
        }
        for k in 0..=s {
            cur[pos] = k as u8;
            rec(n, s - k, pos + 1, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    rec(n, s, 0, &mut vec![0u8; n], &mut out);
    out
}

fn neg_i_pow(s: usize) -> Complex64 {
    match s % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Levels `1, 0, …, lowest` of the symbol recursion, indexed by `1 − j`.
fn recursion(f: &FieldJets, lowest: i32) -> Result<Vec<CJet>> {
    let nt = f.nt;
    let xn = nt;
    let q2 = f.q2();
    if !(q2.value() > 0.0) {
        return Err(Error::Degenerate(format!("principal symbol q2 = {} is not positive", q2.value())));
    }
    let b1 = -q2.sqrt();
    let inv2b1 = (b1.clone() * 2.0).powi(-1);
    let e = f.e();
    let mut b: Vec<CJet> = vec![CJet::from_real(b1)];
    let mut m = 1i32;
    while m > lowest {
        let bm = &b[(1 - m) as usize];
        let mut acc = bm.scale(&e) - bm.diff(xn);
        if m == 1 {
            acc = acc + f.q1() + f.magnetic();
        } else if m == 0 {
            acc = acc + f.g_tilde();
        }
        for j in m..=1 {
            for k in m..=1 {
                let s = j + k - m;
                if s < 0 {
                    continue;
                }
                let s = s as usize;
                for kk in multi_indices(nt, s) {
                    let mut dxi = b[(1 - j) as usize].clone();
                    let mut dx = b[(1 - k) as usize].clone();
                    let mut kfact = 1.0;
                    for (v, &p) in kk.iter().enumerate() {
                        for _ in 0..p {
                            dxi = dxi.diff(nt + 1 + v);
                            dx = dx.diff(v);
                        }
                        kfact *= factorial(p as usize);
                    }
                    acc = acc - (dxi * dx).mul_c(neg_i_pow(s) / kfact);
                }
            }
        }
        b.push(acc.scale(&inv2b1));
        m -= 1;
    }
    Ok(b)
}

/// Variables `(x', ξ')` inside the symbol space.
fn tangential_keep(nt: usize) -> Vec<usize> {
    (0..nt).chain(nt + 1..2 * nt + 1).collect()
}

/// Principal and lower-order pieces of the conjugated operator.
#[derive(Clone, Debug)]
pub struct OperatorSymbols {
    /// `q₂ = g^{αβ}ξ_αξ_β`.
    pub q2: SymbolFunction,
    /// `q₁ = −i(½g^{αβ}∂_α log|g| + ∂_α g^{αβ})ξ_β`.
    pub q1: SymbolFunction,
    /// `E = ½ g_{αβ} ∂_n g^{αβ}` on the boundary.
    pub e: SymbolFunction,
    /// `G̃` on the boundary.
    pub g_tilde: SymbolFunction,
}

pub fn operator_symbols(bc: &BoundaryCoefficients) -> Result<OperatorSymbols> {
    check_a_normalized(bc, &bc.centre())?;
    let nt = bc.tangential_dim();
    let shared = Arc::new(bc.clone());
    let make = |level: i32, extra: usize, pick: fn(&FieldJets) -> CJet| {
        let bc = shared.clone();
        SymbolFunction::new(level, nt, move |xp, xi, order| {
            check_a_normalized(&bc, xp)?;
            let f = field_jets(&bc, xp, xi, order + extra)?;
            Ok(pick(&f).slice(&tangential_keep(nt), order))
        })
    };
    Ok(OperatorSymbols {
        q2: make(2, 0, |f| CJet::from_real(f.q2())),
        q1: make(1, 1, |f| f.q1()),
        e: make(0, 1, |f| CJet::from_real(f.e())),
        g_tilde: make(0, 1, |f| f.g_tilde()),
    })
}

/// Symbol level `b_j` for `j ∈ {1, 0, −1, −2}`.
pub fn symbol_b(bc: &BoundaryCoefficients, level: i32) -> Result<SymbolFunction> {
    if !(-2..=1).contains(&level) {
        return Err(Error::InvalidParameters(format!("symbol level {level} outside 1, 0, -1, -2")));
    }
    check_a_normalized(bc, &bc.centre())?;
    let nt = bc.tangential_dim();
    let bc = Arc::new(bc.clone());
    Ok(SymbolFunction::new(level, nt, move |xp, xi, order| {
        check_xi(xi)?;
        check_a_normalized(&bc, xp)?;
        let f = field_jets(&bc, xp, xi, order + (1 - level) as usize)?;
        let b = recursion(&f, level)?;
        Ok(b[(1 - level) as usize].slice(&tangential_keep(nt), order))
    }))
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

/// Boundary jets at `(x', 0)`. Tensor fields are stored with upper indices,
/// as they appear in the symbols: `g_ab = g^{αβ}`, `dn_g_ab = ∂_n g^{αβ}`.
#[derive(Clone, Debug, Serialize)]
pub struct RecoveredJets {
    pub x: Vec<f64>,
    pub g_ab: Vec<Vec<f64>>,
    pub dn_g_ab: Vec<Vec<f64>>,
    pub a_alpha: Vec<Complex64>,
    pub k_ab: Vec<Vec<f64>>,
    pub l_ab: Vec<Vec<Complex64>>,
    pub dn_a_alpha: Vec<Complex64>,
}

impl RecoveredJets {
    /// Largest violation of `k = ∂_n g − (g_{γδ}∂_n g^{γδ}) g` and of the trace relation.
    pub fn consistency_defect(&self) -> f64 {
        let nt = self.g_ab.len();
        let g = DMatrix::from_fn(nt, nt, |i, j| self.g_ab[i][j]);
        let dg = DMatrix::from_fn(nt, nt, |i, j| self.dn_g_ab[i][j]);
        let k = DMatrix::from_fn(nt, nt, |i, j| self.k_ab[i][j]);
        let Some(glow) = g.clone().try_inverse() else {
            return f64::INFINITY;
        };
        let tau = glow.component_mul(&dg).sum();
        let d1 = (&k - (&dg - &g * tau)).amax();
        let trk = glow.component_mul(&k).sum();
        let d2 = (trk + (nt as f64 - 1.0) * tau).abs();
        d1.max(d2)
    }
}

/// Per-field relative deviations between two jet sets.
#[derive(Clone, Debug, Serialize)]
pub struct JetComparison {
    pub fields: BTreeMap<String, f64>,
    pub max_relative: f64,
}

fn rel_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.norm()).fold(0.0, f64::max);
    if scale > 1e-8 {
        diff / scale
    } else {
        diff
    }
}

fn flat_real(m: &[Vec<f64>]) -> Vec<Complex64> {
    m.iter().flatten().map(|v| Complex64::new(*v, 0.0)).collect()
}

/// Relative error of `rec` against `truth` for every field (absolute when the
/// true field vanishes).
pub fn compare(rec: &RecoveredJets, truth: &RecoveredJets) -> JetComparison {
    let mut fields = BTreeMap::new();
    fields.insert("g_ab".to_string(), rel_dev(&flat_real(&rec.g_ab), &flat_real(&truth.g_ab)));
    fields.insert("dn_g_ab".to_string(), rel_dev(&flat_real(&rec.dn_g_ab), &flat_real(&truth.dn_g_ab)));
    fields.insert("a_alpha".to_string(), rel_dev(&rec.a_alpha, &truth.a_alpha));
    fields.insert("k_ab".to_string(), rel_dev(&flat_real(&rec.k_ab), &flat_real(&truth.k_ab)));
    let l1: Vec<Complex64> = rec.l_ab.iter().flatten().copied().collect();
    let l2: Vec<Complex64> = truth.l_ab.iter().flatten().copied().collect();
    fields.insert("l_ab".to_string(), rel_dev(&l1, &l2));
    fields.insert("dn_a_alpha".to_string(), rel_dev(&rec.dn_a_alpha, &truth.dn_a_alpha));
    let max_relative = fields.values().fold(0.0f64, |m, v| m.max(*v));
    JetComparison { fields, max_relative }
}

/// Jets read directly off the coefficients, the ground truth for [`recover`].
pub fn direct_jets(bc: &BoundaryCoefficients, xp: &[f64]) -> Result<RecoveredJets> {
    let n = bc.dim;
    let nt = n - 1;
    let mut x = xp.to_vec();
    x.push(0.0);
    let v = Jet::vars(&x, 3);
    let glow: Vec<Jet> = bc.g.iter().flat_map(|row| row.iter().map(|e| e.eval(&v))).collect();
    let (ginv, _) = invert_jets(nt, &glow);
    let dg: Vec<Jet> = ginv.iter().map(|j| j.diff(nt)).collect();
    let mut tau = v[0].cst(0.0);
    for k in 0..nt * nt {
        tau = tau + glow[k].clone() * dg[k].clone();
    }
    let (t0, dt) = (tau.value(), tau.d(nt));
    let q = cjet_of(&bc.q.value, &v).value();
    let an = cjet_of(&bc.a.comps[nt], &v);
    let h = -an.integrate(nt);
    let at: Vec<CJet> = (0..nt).map(|a| cjet_of(&bc.a.comps[a], &v) + h.diff(a)).collect();
    let m = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> { (0..nt).map(|a| (0..nt).map(|b| f(a * nt + b)).collect()).collect() };
    let k = |i: usize| dg[i].value() - t0 * ginv[i].value();
    Ok(RecoveredJets {
        x: xp.to_vec(),
        g_ab: m(&|i| ginv[i].value()),
        dn_g_ab: m(&|i| dg[i].value()),
        a_alpha: at.iter().map(|j| j.value()).collect(),
        k_ab: m(&k),
        l_ab: (0..nt)
            .map(|a| {
                (0..nt)
                    .map(|b| {
                        let i = a * nt + b;
                        let dk = dg[i].d(nt) - dt * ginv[i].value() - t0 * dg[i].value();
                        Complex64::new(0.25 * dk, 0.0) + q * ginv[i].value()
                    })
                    .collect()
            })
            .collect(),
        dn_a_alpha: at.iter().map(|j| j.d(nt)).collect(),
    })
}

/// `count` unit directions in `ℝ^nt`: the first half from a deterministic sweep
/// of a half sphere, the second half their negatives.
pub fn sweep_directions(nt: usize, count: usize) -> Vec<Vec<f64>> {
    let half = count.div_ceil(2).max(1);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2 * half);
    match nt {
        1 => dirs.push(vec![1.0]),
        2 => {
            for k in 0..half {
                let t = std::f64::consts::PI * (k as f64 + 0.5) / half as f64;
                dirs.push(vec![t.cos(), t.sin()]);
            }
        }
        3 => {
            // Fibonacci spiral on the upper hemisphere.
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for k in 0..half {
                let z = (k as f64 + 0.5) / half as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * k as f64;
                dirs.push(vec![r * t.cos(), r * t.sin(), z]);
            }
        }
        _ => {
            let mut rng = crate::rng::seeded(0x5eed_b0d7);
            for _ in 0..half {
                let mut d = crate::rng::on_sphere(&mut rng, nt);
                if d[nt - 1] < 0.0 {
                    d.iter_mut().for_each(|v| *v = -*v);
                }
                dirs.push(d);
            }
        }
    }
    let neg: Vec<Vec<f64>> = dirs.iter().map(|d| d.iter().map(|v| -v).collect()).collect();
    dirs.extend(neg);
    dirs
}

/// Fits a symmetric form `S` with `S^{αβ} ξ_α ξ_β = rhs(ξ)` coefficientwise over jets.
fn fit_quadratic(dirs: &[Vec<f64>], rhs: &[Jet]) -> Result<Vec<Jet>> {
    let nt = dirs[0].len();
    let pairs: Vec<(usize, usize)> = (0..nt).flat_map(|a| (a..nt).map(move |b| (a, b))).collect();
    let a = DMatrix::from_fn(dirs.len(), pairs.len(), |r, c| {
        let (i, j) = pairs[c];
        let w = if i == j { 1.0 } else { 2.0 };
        w * dirs[r][i] * dirs[r][j]
    });
    let sols = fit_columns(&a, rhs)?;
    let mut out = vec![rhs[0].cst(0.0); nt * nt];
    for (c, &(i, j)) in pairs.iter().enumerate() {
        out[i * nt + j] = sols[c].clone();
        out[j * nt + i] = sols[c].clone();
    }
    Ok(out)
}

/// Fits a covector `v` with `v^β ξ_β = rhs(ξ)` coefficientwise over jets.
fn fit_linear(dirs: &[Vec<f64>], rhs: &[Jet]) -> Result<Vec<Jet>> {
    let a = DMatrix::from_fn(dirs.len(), dirs[0].len(), |r, c| dirs[r][c]);
    fit_columns(&a, rhs)
}

fn fit_columns(a: &DMatrix<f64>, rhs: &[Jet]) -> Result<Vec<Jet>> {
    let ncoef = rhs[0].c.len();
    let mut out = vec![rhs[0].cst(0.0); a.ncols()];
    for c in 0..ncoef {
        let b = DVector::from_fn(rhs.len(), |r, _| rhs[r].c[c]);
        if b.amax() == 0.0 {
            continue;
        }
        let s = least_squares(a, &b, MAX_FIT_CONDITION)?;
        for (o, v) in out.iter_mut().zip(s.iter()) {
            o.c[c] = *v;
        }
    }
    Ok(out)
}

fn fit_quadratic_c(dirs: &[Vec<f64>], rhs: &[CJet]) -> Result<Vec<CJet>> {
    let re: Vec<Jet> = rhs.iter().map(|j| j.re.clone()).collect();
    let im: Vec<Jet> = rhs.iter().map(|j| j.im.clone()).collect();
    Ok(fit_quadratic(dirs, &re)?.into_iter().zip(fit_quadratic(dirs, &im)?).map(|(re, im)| CJet { re, im }).collect())
}

fn fit_linear_c(dirs: &[Vec<f64>], rhs: &[CJet]) -> Result<Vec<CJet>> {
    let re: Vec<Jet> = rhs.iter().map(|j| j.re.clone()).collect();
    let im: Vec<Jet> = rhs.iter().map(|j| j.im.clone()).collect();
    Ok(fit_linear(dirs, &re)?.into_iter().zip(fit_linear(dirs, &im)?).map(|(re, im)| CJet { re, im }).collect())
}

fn lower_covector(glow: &[Jet], v: &[CJet]) -> Vec<CJet> {
    let nt = v.len();
    (0..nt)
        .map(|a| {
            let mut s = CJet::from_real(glow[0].cst(0.0));
            for b in 0..nt {
                s = s + v[b].scale(&glow[a * nt + b]);
            }
            s
        })
        .collect()
}

/// Order of the tangential jets carried through the recovery.
const RECOVERY_ORDER: usize = 2;

/// Recovers boundary jets at `x'` from the black-box symbols `b₁, b₀, b₋₁`.
///
/// Terms of `b₀` and `b₋₁` that depend only on already recovered data are
/// removed by running the forward recursion on a surrogate coefficient set
/// built from those data, with the unknowns (`∂_n²g` off its trace, `q`,
/// `∂_nÃ`) set to zero. The remainders are exactly the quadratic and linear
/// forms in `ω = ξ'/|ξ'|_g` that the recovery inverts.
pub fn recover(b1: &SymbolFunction, b0: &SymbolFunction, bm1: &SymbolFunction, n: usize, xp: &[f64]) -> Result<RecoveredJets> {
    let nt = n - 1;
    if n < 3 {
        return Err(Error::Dimension("boundary recovery needs n >= 3".into()));
    }
    if (b1.level, b0.level, bm1.level) != (1, 0, -1) || [b1.nt, b0.nt, bm1.nt].iter().any(|&k| k != nt) {
        return Err(Error::InvalidParameters("recover expects symbols b1, b0, b-1 of matching dimension".into()));
    }
    let r = RECOVERY_ORDER;
    let xkeep: Vec<usize> = (0..nt).collect();
    let q2 = |xi: &[f64]| -> Result<Jet> {
        let b = b1.jet(xp, xi, r)?.re.slice(&xkeep, r);
        Ok(b.clone() * b)
    };

    // Step 1: polarization.
    let unit = |a: usize| -> Vec<f64> { (0..nt).map(|k| if k == a { 1.0 } else { 0.0 }).collect() };
    let diag: Vec<Jet> = (0..nt).map(|a| q2(&unit(a))).collect::<Result<_>>()?;
    let mut ginv = vec![diag[0].cst(0.0); nt * nt];
    for a in 0..nt {
        ginv[a * nt + a] = diag[a].clone();
        for b in a + 1..nt {
            let s: Vec<f64> = (0..nt).map(|k| if k == a || k == b { 1.0 } else { 0.0 }).collect();
            let off = (q2(&s)? - diag[a].clone() - diag[b].clone()) * 0.5;
            ginv[a * nt + b] = off.clone();
            ginv[b * nt + a] = off;
        }
    }
    let (glow, det_inv) = invert_jets(nt, &ginv);
    if !(det_inv.value() > 0.0) {
        return Err(Error::NotPositiveDefinite(xp.to_vec()));
    }
    let log_g = -det_inv.ln();

    let dirs = sweep_directions(nt, 4 * nt * nt);
    let half = dirs.len() / 2;
    let norm2 = |xi: &[f64]| -> Jet {
        let mut s = log_g.cst(0.0);
        for a in 0..nt {
            for b in 0..nt {
                s = s + ginv[a * nt + b].clone() * (xi[a] * xi[b]);
            }
        }
        s
    };

    // Step 2: b₀ minus the part computable from g.
    let remainder0 = |xi: &[f64]| -> Result<CJet> {
        let b1j = b1.jet(xp, xi, r)?;
        let mut grad = CJet::from_real(log_g.cst(0.0));
        for v in 0..nt {
            grad = grad + (b1j.diff(nt + v) * b1j.diff(v)).mul_c(Complex64::new(0.0, -1.0)).slice(&xkeep, r);
        }
        let mut q1 = log_g.cst(0.0);
        for a in 0..nt {
            for b in 0..nt {
                let g = &ginv[a * nt + b];
                q1 = q1 + (g.clone() * log_g.diff(a) * 0.5 + g.diff(a)) * xi[b];
            }
        }
        let q1 = CJet { re: log_g.cst(0.0), im: -q1 };
        let b1x = b1j.re.slice(&xkeep, r);
        let b0x = b0.jet(xp, xi, r)?.slice(&xkeep, r);
        Ok(b0x - (q1 - grad).scale(&(b1x * 2.0).powi(-1)))
    };
    let mut even0 = Vec::with_capacity(half);
    let mut odd0 = Vec::with_capacity(half);
    for d in &dirs[..half] {
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (rp, rm) = (remainder0(d)?, remainder0(&neg)?);
        let n2 = norm2(d);
        even0.push((rp.clone() + rm.clone()).scale(&n2) * -2.0);
        odd0.push((rp - rm).scale(&n2.sqrt()) * -0.5);
    }
    let k_fit = fit_quadratic_c(&dirs[..half], &even0)?;
    let k: Vec<Jet> = k_fit.into_iter().map(|j| j.re).collect();
    let at = lower_covector(&glow, &fit_linear_c(&dirs[..half], &odd0)?);

    // Step 3: trace relation.
    let mut trk = log_g.cst(0.0);
    for i in 0..nt * nt {
        trk = trk + glow[i].clone() * k[i].clone();
    }
    let tau = trk * (-1.0 / (n as f64 - 2.0));
    let dng: Vec<Jet> = (0..nt * nt).map(|i| k[i].clone() + tau.clone() * ginv[i].clone()).collect();

    // Step 4: b₋₁ against the surrogate.
    let g0 = DMatrix::from_fn(nt, nt, |a, b| ginv[a * nt + b].value());
    let glow0 = DMatrix::from_fn(nt, nt, |a, b| glow[a * nt + b].value());
    let k0 = DMatrix::from_fn(nt, nt, |a, b| dng[a * nt + b].value());
    let dn_glow0 = -(&glow0 * &k0 * &glow0);
    let t = -dn_glow0.component_mul(&k0).sum() / nt as f64;
    let surrogate = |xi: &[f64]| -> Result<FieldJets> {
        let mut base = xp.to_vec();
        base.push(0.0);
        base.extend_from_slice(xi);
        let v = Jet::vars(&base, 2);
        let delta: Vec<Jet> = (0..nt).map(|a| v[a].clone() + (-xp[a])).collect();
        let xn = v[nt].clone();
        let gs: Vec<Jet> = (0..nt * nt)
            .map(|i| {
                ginv[i].substitute(&delta)
                    + xn.clone() * dng[i].substitute(&delta)
                    + xn.clone() * xn.clone() * (0.5 * t * g0[(i / nt, i % nt)])
            })
            .collect();
        let (gl, di) = invert_jets(nt, &gs);
        Ok(FieldJets {
            nt,
            ginv: gs,
            glow: gl,
            logdet: -di.ln(),
            at: at.iter().map(|a| a.substitute(&delta)).collect(),
            q: CJet::from_real(xn.cst(0.0)),
            xi: v[nt + 1..].to_vec(),
        })
    };
    let p = |xi: &[f64]| -> Result<Complex64> {
        let bs = recursion(&surrogate(xi)?, -1)?;
        let b1v = b1.eval(xp, xi)?;
        Ok((bm1.eval(xp, xi)? - bs[2].value()) * b1v * 2.0)
    };
    let scalar = |z: Complex64| CJet::constant(&log_g.cst(0.0), z);
    let mut even1 = Vec::with_capacity(half);
    let mut odd1 = Vec::with_capacity(half);
    for d in &dirs[..half] {
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (pp, pm) = (p(d)?, p(&neg)?);
        let n2 = norm2(d).value();
        even1.push(scalar((pp + pm) * 0.5 * n2));
        odd1.push(scalar((pp - pm) * 0.5 * n2.sqrt()));
    }
    let lfit = fit_quadratic_c(&dirs[..half], &even1)?;
    let dn_at = lower_covector(&glow, &fit_linear_c(&dirs[..half], &odd1)?);
    let tau0 = tau.value();

    let mat = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> { (0..nt).map(|a| (0..nt).map(|b| f(a, b)).collect()).collect() };
    Ok(RecoveredJets {
        x: xp.to_vec(),
        g_ab: mat(&|a, b| g0[(a, b)]),
        dn_g_ab: mat(&|a, b| k0[(a, b)]),
        a_alpha: at.iter().map(|j| j.value()).collect(),
        k_ab: mat(&|a, b| k[a * nt + b].value()),
        l_ab: (0..nt)
            .map(|a| {
                (0..nt)
                    .map(|b| lfit[a * nt + b].value() + 0.25 * (t * g0[(a, b)] - tau0 * k0[(a, b)]))
                    .collect()
            })
            .collect(),
        dn_a_alpha: dn_at.iter().map(|j| j.value()).collect(),
    })
}

/// Outcome of the two-coefficient-set boundary determination check.
#[derive(Clone, Debug, Serialize)]
pub struct DeskCheck {
    /// Largest relative gap between the symbols `b₁, b₀, b₋₁` over the sweep.
    pub symbol_gap: f64,
    /// `|g_{αβ}(l₁ − l₂)^{αβ}| / (n − 1)`, the boundary gap in `q`.
    pub potential_gap: f64,
    /// `max_α |Ã₁ − Ã₂|` on the boundary.
    pub form_gap: f64,
    /// Largest gap in the recovered metric jets.
    pub metric_gap: f64,
}

pub fn desk_check(bc1: &BoundaryCoefficients, bc2: &BoundaryCoefficients, xp: &[f64]) -> Result<DeskCheck> {
    if bc1.dim != bc2.dim {
        return Err(Error::Dimension("coefficient sets of different dimension".into()));
    }
    let n = bc1.dim;
    let nt = n - 1;
    let s1: Vec<SymbolFunction> = [1, 0, -1].iter().map(|&l| symbol_b(bc1, l)).collect::<Result<_>>()?;
    let s2: Vec<SymbolFunction> = [1, 0, -1].iter().map(|&l| symbol_b(bc2, l)).collect::<Result<_>>()?;
    let mut symbol_gap = 0.0f64;
    for d in sweep_directions(nt, 4 * nt * nt) {
        for (a, b) in s1.iter().zip(&s2) {
            let (u, v) = (a.eval(xp, &d)?, b.eval(xp, &d)?);
            symbol_gap = symbol_gap.max((u - v).norm() / u.norm().max(v.norm()).max(1.0));
        }
    }
    let r1 = recover(&s1[0], &s1[1], &s1[2], n, xp)?;
    let r2 = recover(&s2[0], &s2[1], &s2[2], n, xp)?;
    let g = DMatrix::from_fn(nt, nt, |a, b| r1.g_ab[a][b]);
    let glow = g.try_inverse().ok_or_else(|| Error::NotPositiveDefinite(xp.to_vec()))?;
    let mut tr = Complex64::new(0.0, 0.0);
    let mut metric_gap = 0.0f64;
    for a in 0..nt {
        for b in 0..nt {
            tr += (r1.l_ab[a][b] - r2.l_ab[a][b]) * glow[(a, b)];
            metric_gap = metric_gap
                .max((r1.g_ab[a][b] - r2.g_ab[a][b]).abs())
                .max((r1.dn_g_ab[a][b] - r2.dn_g_ab[a][b]).abs());
        }
    }
    let form_gap = r1.a_alpha.iter().zip(&r2.a_alpha).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    Ok(DeskCheck { symbol_gap, potential_gap: tr.norm() / nt as f64, form_gap, metric_gap })
}

// ---------------------------------------------------------------------------
// Gauge identities
// ---------------------------------------------------------------------------

/// `−|g|^{-1/2}(∂_j + iA_j)(|g|^{1/2} g^{jk}(∂_k + iA_k)u) + qu` at the base point.
fn apply_operator(ginv: &[Jet], sqrt_det: &Jet, a: &[CJet], q: Complex64, u: &CJet) -> Complex64 {
    let n = a.len();
    let cov: Vec<CJet> = (0..n).map(|k| u.diff(k) + (a[k].clone() * u.clone()).mul_i()).collect();
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let mut flux = CJet::from_real(sqrt_det.cst(0.0));
        for (k, ck) in cov.iter().enumerate() {
            flux = flux + ck.scale(&(sqrt_det.clone() * ginv[j * n + k].clone()));
        }
        total += flux.diff(j).value() + Complex64::new(0.0, 1.0) * a[j].value() * flux.value();
    }
    -total / sqrt_det.value() + q * u.value()
}

/// Residuals of the conformal and gauge identities at a point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GaugeResiduals {
    pub res_conformal: f64,
    pub res_gauge: f64,
    /// Magnitude of the compared terms, for relative tolerances.
    pub scale: f64,
}

pub fn gauge_identity_residual(
    bc: &BoundaryCoefficients,
    c: &ScalarField,
    psi: &ScalarField,
    u: &ScalarField,
    x: &[f64],
) -> Result<GaugeResiduals> {
    let n = bc.dim;
    if x.len() != n {
        return Err(Error::Dimension(format!("point has {} coordinates, expected {n}", x.len())));
    }
    let nt = n - 1;
    let interior = x[nt] > 0.0 && x[nt] < bc.depth && (0..nt).all(|a| x[a] > bc.lo[a] && x[a] < bc.hi[a]);
    if !interior {
        return Err(Error::NotInterior(x.to_vec()));
    }
    let c_expr = c.real_part()?;
    if !(c_expr.at(x) > 0.0) {
        return Err(Error::InvalidParameters(format!("conformal factor must be positive, got {}", c_expr.at(x))));
    }
    let v = Jet::vars(x, 2);
    let gfull: Vec<Jet> = bc.full_metric().iter().flat_map(|row| row.iter().map(|e| e.eval(&v))).collect();
    let (ginv, det) = invert_jets(n, &gfull);
    let sd = det.sqrt();
    let a: Vec<CJet> = bc.a.comps.iter().map(|e| cjet_of(e, &v)).collect();
    let q = bc.q.at(x);
    let uj = cjet_of(&u.value, &v);
    let cj = c_expr.eval(&v);
    let s = (n as f64 - 2.0) / 4.0;

    // Conformal identity.
    let w = uj.scale(&cj.powf(-s));
    let lhs = apply_operator(&ginv, &sd, &a, q, &w) * cj.value().powf((n as f64 + 2.0) / 4.0);
    let d = CJet::from_real(cj.powf(-s));
    let zero_a: Vec<CJet> = (0..n).map(|_| CJet::from_real(v[0].cst(0.0))).collect();
    let lap_d = -apply_operator(&ginv, &sd, &zero_a, Complex64::new(0.0, 0.0), &d);
    let qc = lap_d / d.value();
    let cinv = cj.powi(-1);
    let gc: Vec<Jet> = gfull.iter().map(|e| e.clone() * cinv.clone()).collect();
    let (ginv_c, det_c) = invert_jets(n, &gc);
    let rhs = apply_operator(&ginv_c, &det_c.sqrt(), &a, (q - qc) * cj.value(), &uj);
    let res_conformal = (lhs - rhs).norm();

    // Magnetic gauge identity.
    let pj = cjet_of(&psi.value, &v);
    let phase = CJet::cis(&pj.re).scale(&(-pj.im.clone()).exp());
    let lhs_g = apply_operator(&ginv, &sd, &a, q, &(phase.clone() * uj.clone())) / phase.value();
    let a_shift: Vec<CJet> = (0..n).map(|j| a[j].clone() + pj.diff(j)).collect();
    let rhs_g = apply_operator(&ginv, &sd, &a_shift, q, &uj);
    let res_gauge = (lhs_g - rhs_g).norm();

    let scale = [lhs.norm(), rhs.norm(), lhs_g.norm(), rhs_g.norm(), 1.0].into_iter().fold(0.0, f64::max);
    Ok(GaugeResiduals { res_conformal, res_gauge, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 3).len(), 4);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert!(multi_indices(2, 0) == vec![vec![0, 0]]);
    }

    #[test]
    fn flat_symbols_close_form() {
        let bc = BoundaryCoefficients::flat(3, Complex64::new(2.5, 0.0)).unwrap();
        let xi = [0.6, -1.3];
        let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let b: Vec<Complex64> = (-2..=1).rev().map(|l| symbol_b(&bc, l).unwrap().eval(&[0.1, 0.2], &xi).unwrap()).collect();
        assert!((b[0] + r).norm() < 1e-14);
        assert!(b[1].norm() < 1e-14);
        assert!((b[2] + 2.5 / (2.0 * r)).norm() < 1e-14);
        assert!(b[3].norm() < 1e-14);
    }

    #[test]
    fn determinant_and_inverse_expressions() {
        let x = Expr::coords(2);
        let m = vec![
            vec![2.0 + x[0].clone(), x[1].clone(), Expr::c(0.1)],
            vec![x[1].clone(), 3.0 + Expr::zero(), x[0].clone()],
            vec![Expr::c(0.1), x[0].clone(), Expr::c(1.5)],
        ];
        let p = [0.3, -0.2];
        let (inv, det) = expr_inverse(&m);
        let mv = DMatrix::from_fn(3, 3, |i, j| m[i][j].at(&p));
        assert!((det.at(&p) - mv.determinant()).abs() < 1e-13);
        let iv = mv.try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[i][j].at(&p) - iv[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn directions_are_paired_and_unit() {
        for nt in 2..=4 {
            let d = sweep_directions(nt, 4 * nt * nt);
            let h = d.len() / 2;
            for k in 0..h {
                assert!((d[k].iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
                assert!(d[k].iter().zip(&d[k + h]).all(|(a, b)| a == &-b));
            }
        }
    }
}
