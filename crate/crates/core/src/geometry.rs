//! Chart-based Riemannian geometry.
//!
//! A [`ChartMetric`] is a symmetric matrix of [`Expr`] components on a single
//! coordinate chart. Derivatives of the components come from forward-mode jets;
//! third derivatives (needed only for the Cotton tensor) are central
//! differences of second-order jets.
//!
//! Conventions:
//! * `Γ^l_{jk} = ½ g^{lm}(∂_j g_{km} + ∂_k g_{jm} − ∂_m g_{jk})`
//! * `R_{abcd} = ⟨(D_a D_b − D_b D_a) ∂_c, ∂_d⟩`, `R_{bc} = g^{ad} R_{abcd}`
//! * `P_{ab} = (R_{ab} − Scal/(2(n−1)) g_{ab})/(n−2)`
//! * `W_{abcd} = R_{abcd} + P_{ac} g_{bd} + P_{bd} g_{ac} − P_{bc} g_{ad} − P_{ad} g_{bc}`
//! * `C_{abc} = D_a P_{bc} − D_b P_{ac}`

use crate::error::{Error, Result};
use crate::expr::{CExpr, Expr};
use crate::jet::{Jet, Real};
use crate::linalg;
use crate::tolerance::Tolerance;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::sync::Arc;

/// Predicate restricting a chart box.
pub type Mask = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Coordinate chart: an axis-aligned box, an optional mask and an optional
/// boundary defining function `β` (positive inside, zero on the boundary).
#[derive(Clone)]
pub struct Chart {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub inside: Option<Mask>,
    pub boundary_fn: Option<Expr>,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("dim", &self.dim)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("masked", &self.inside.is_some())
            .field("boundary_fn", &self.boundary_fn.is_some())
            .finish()
    }
}

impl Chart {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Chart> {
        if lo.len() != hi.len() || lo.len() < 2 {
            return Err(Error::InvalidParameters("chart needs dim >= 2 and matching bounds".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameters("chart box is empty".into()));
        }
        Ok(Chart { dim: lo.len(), lo, hi, inside: None, boundary_fn: None })
    }

    /// Cube `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Chart {
        Chart::new(vec![-r; n], vec![r; n]).expect("valid cube")
    }

    pub fn with_mask(mut self, m: Mask) -> Chart {
        self.inside = Some(m);
        self
    }

    pub fn with_boundary(mut self, beta: Expr) -> Chart {
        self.boundary_fn = Some(beta);
        self
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v > *a && *v < *b)
    }

    /// Strictly inside the box and accepted by the mask.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        self.in_box(x) && self.inside.as_ref().map(|m| m(x)).unwrap_or(true)
    }

    pub fn require_interior(&self, x: &[f64]) -> Result<()> {
        if self.is_interior(x) {
            Ok(())
        } else {
            Err(Error::NotInterior(x.to_vec()))
        }
    }

    /// Checks the gradient floor of `β` at the supplied zero-level points.
    pub fn check_boundary_gradient(&self, points: &[Vec<f64>], floor: f64) -> Result<()> {
        let beta = self
            .boundary_fn
            .as_ref()
            .ok_or_else(|| Error::InvalidParameters("chart has no boundary function".into()))?;
        for p in points {
            let d = beta.dual(p);
            let norm = d.d[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= floor {
                return Err(Error::Degenerate(format!("boundary gradient {norm:e} at {p:?}")));
            }
        }
        Ok(())
    }
}

/// Complex scalar field on an `dim`-dimensional chart.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub dim: usize,
    pub value: CExpr,
}

impl ScalarField {
    pub fn real(dim: usize, e: Expr) -> ScalarField {
        ScalarField { dim, value: CExpr::real(e) }
    }

    pub fn complex(dim: usize, value: CExpr) -> ScalarField {
        ScalarField { dim, value }
    }

    pub fn constant(dim: usize, v: f64) -> ScalarField {
        ScalarField::real(dim, Expr::c(v))
    }

    pub fn is_real(&self) -> bool {
        self.value.is_real()
    }

    pub fn real_part(&self) -> Result<&Expr> {
        if self.is_real() {
            Ok(&self.value.re)
        } else {
            Err(Error::ComplexField)
        }
    }

    pub fn at(&self, x: &[f64]) -> Complex64 {
        self.value.at(x)
    }

    /// Exterior derivative as a one-form.
    pub fn differential(&self) -> OneFormField {
        OneFormField { comps: (0..self.dim).map(|j| self.value.diff(j)).collect() }
    }
}

/// Complex one-form `A = A_j dx^j`.
#[derive(Clone, Debug)]
pub struct OneFormField {
    pub comps: Vec<CExpr>,
}

impl OneFormField {
    pub fn zero(dim: usize) -> OneFormField {
        OneFormField { comps: vec![CExpr::zero(); dim] }
    }

    pub fn real(comps: Vec<Expr>) -> OneFormField {
        OneFormField { comps: comps.into_iter().map(CExpr::real).collect() }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn is_real(&self) -> bool {
        self.comps.iter().all(|c| c.is_real())
    }

    pub fn at(&self, x: &[f64]) -> Vec<Complex64> {
        self.comps.iter().map(|c| c.at(x)).collect()
    }

    pub fn add(&self, o: &OneFormField) -> OneFormField {
        OneFormField { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.clone() + b.clone()).collect() }
    }
}

/// Symmetric positive-definite metric on a chart.
#[derive(Clone, Debug)]
pub struct ChartMetric {
    pub chart: Chart,
    comps: Vec<Expr>,
    constant: bool,
}

#[inline]
pub fn idx3(n: usize, a: usize, b: usize, c: usize) -> usize {
    (a * n + b) * n + c
}

#[inline]
pub fn idx4(n: usize, a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * n + b) * n + c) * n + d
}

/// Jets of metric components, inverse and determinant at a point.
pub struct MetricJets {
    pub n: usize,
    pub g: Vec<Jet>,
    pub ginv: Vec<Jet>,
    pub det: Jet,
}

impl MetricJets {
    /// `Γ^l_{jk}` as jets one order below the metric jets.
    pub fn christoffel(&self) -> Vec<Jet> {
        let n = self.n;
        let dg: Vec<Vec<Jet>> = (0..n).map(|m| self.g.iter().map(|c| c.diff(m)).collect()).collect();
        let mut out = Vec::with_capacity(n * n * n);
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut acc: Option<Jet> = None;
                    for m in 0..n {
                        let t = dg[j][k * n + m].clone() + dg[k][j * n + m].clone() - dg[m][j * n + k].clone();
                        let term = self.ginv[l * n + m].clone() * t;
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a + term,
                        });
                    }
                    out.push(acc.expect("n >= 1") * 0.5);
                }
            }
        }
        out
    }
}

/// Inverse and determinant of a small matrix of jets by Gauss–Jordan elimination.
pub fn invert_jets(n: usize, m: &[Jet]) -> (Vec<Jet>, Jet) {
    let mut a: Vec<Jet> = m.to_vec();
    let mut inv: Vec<Jet> = (0..n * n).map(|k| m[0].cst(if k % (n + 1) == 0 { 1.0 } else { 0.0 })).collect();
    let mut det = m[0].cst(1.0);
    for col in 0..n {
        // Partial pivoting on point values.
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].value().abs() > a[piv * n + col].value().abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
                inv.swap(col * n + c, piv * n + c);
            }
            det = -det;
        }
        let p = a[col * n + col].clone();
        det = det * p.clone();
        let pinv = p.powi(-1);
        for c in 0..n {
            a[col * n + c] = a[col * n + c].clone() * pinv.clone();
            inv[col * n + c] = inv[col * n + c].clone() * pinv.clone();
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col].clone();
            if f.c.iter().all(|&v| v == 0.0) {
                continue;
            }
            for c in 0..n {
                a[r * n + c] = a[r * n + c].clone() - f.clone() * a[col * n + c].clone();
                inv[r * n + c] = inv[r * n + c].clone() - f.clone() * inv[col * n + c].clone();
            }
        }
    }
    (inv, det)
}

impl ChartMetric {
    /// Builds a metric from a full component matrix; the upper triangle is mirrored
    /// so symmetry holds exactly.
    pub fn new(chart: Chart, comps: Vec<Vec<Expr>>) -> Result<ChartMetric> {
        let n = chart.dim;
        if comps.len() != n || comps.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("metric needs {n}x{n} components")));
        }
        let mut flat = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                let (a, b) = if j <= k { (j, k) } else { (k, j) };
                flat.push(comps[a][b].clone());
            }
        }
        let constant = flat.iter().all(|e| e.is_constant());
        Ok(ChartMetric { chart, comps: flat, constant })
    }

    pub fn euclidean(chart: Chart) -> ChartMetric {
        let n = chart.dim;
        let comps = (0..n)
            .map(|j| (0..n).map(|k| Expr::c(if j == k { 1.0 } else { 0.0 })).collect())
            .collect();
        ChartMetric::new(chart, comps).expect("valid euclidean metric")
    }

    /// Diagonal metric.
    pub fn diagonal(chart: Chart, diag: Vec<Expr>) -> Result<ChartMetric> {
        let n = chart.dim;
        let comps = (0..n)
            .map(|j| (0..n).map(|k| if j == k { diag[j].clone() } else { Expr::zero() }).collect())
            .collect();
        ChartMetric::new(chart, comps)
    }

    /// `c · g`.
    pub fn conformal(&self, c: &Expr) -> ChartMetric {
        let comps: Vec<Expr> = self.comps.iter().map(|e| c.clone() * e.clone()).collect();
        let constant = comps.iter().all(|e| e.is_constant());
        ChartMetric { chart: self.chart.clone(), comps, constant }
    }

    pub fn dim(&self) -> usize {
        self.chart.dim
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn component(&self, j: usize, k: usize) -> &Expr {
        &self.comps[j * self.dim() + k]
    }

    pub fn components(&self) -> Vec<Vec<Expr>> {
        let n = self.dim();
        (0..n).map(|j| (0..n).map(|k| self.component(j, k).clone()).collect()).collect()
    }

    /// Metric matrix without any checks.
    pub fn value_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |j, k| self.comps[j * n + k].at(x))
    }

    /// Metric matrix; fails if not positive definite.
    pub fn value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.value_unchecked(x);
        if g.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(x.to_vec()));
        }
        Ok(g)
    }

    pub fn inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.value(x)?;
        g.cholesky().map(|c| c.inverse()).ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))
    }

    /// Component jets, inverse and determinant at an interior point.
    pub fn jets(&self, x: &[f64], order: usize) -> Result<MetricJets> {
        self.chart.require_interior(x)?;
        self.jets_unchecked(x, order)
    }

    /// As [`ChartMetric::jets`] without the interior check (used for one-sided work
    /// near chart edges).
    pub fn jets_unchecked(&self, x: &[f64], order: usize) -> Result<MetricJets> {
        let n = self.dim();
        let vars = Jet::vars(x, order);
        let g: Vec<Jet> = self
            .comps
            .iter()
            .map(|e| match e.as_const() {
                Some(v) => Jet::constant_in(n, order, v),
                None => e.eval(&vars),
            })
            .collect();
        if g[0].value() <= 0.0 {
            return Err(Error::NotPositiveDefinite(x.to_vec()));
        }
        let (ginv, det) = invert_jets(n, &g);
        if det.value() <= 0.0 {
            return Err(Error::NotPositiveDefinite(x.to_vec()));
        }
        Ok(MetricJets { n, g, ginv, det })
    }

    /// Christoffel symbols `Γ^l_{jk}` at an interior point, indexed by [`idx3`].
    pub fn christoffel(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.chart.require_interior(x)?;
        let n = self.dim();
        let mut out = vec![0.0; n * n * n];
        self.christoffel_into(x, &mut out)?;
        Ok(out)
    }

    /// Allocation-light Christoffel evaluation (no interior check), for integrators.
    pub fn christoffel_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        if self.constant {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        debug_assert!(n <= crate::jet::DUAL_VARS);
        let mut g = [[0.0f64; 4]; 4];
        let mut dg = [[[0.0f64; 4]; 4]; 4]; // dg[m][j][k] = ∂_m g_jk
        for j in 0..n {
            for k in j..n {
                let d = self.comps[j * n + k].dual(x);
                g[j][k] = d.v;
                g[k][j] = d.v;
                for m in 0..n {
                    dg[m][j][k] = d.d[m];
                    dg[m][k][j] = d.d[m];
                }
            }
        }
        let ginv = small_inverse(n, &g).ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
        for l in 0..n {
            for j in 0..n {
                for k in j..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += ginv[l][m] * (dg[j][k][m] + dg[k][j][m] - dg[m][j][k]);
                    }
                    out[idx3(n, l, j, k)] = 0.5 * acc;
                    out[idx3(n, l, k, j)] = 0.5 * acc;
                }
            }
        }
        Ok(())
    }

    /// Cholesky factor `L` of `g = L Lᵀ`; the columns of `L^{-T}` form a
    /// g-orthonormal frame.
    pub fn orthonormal_frame(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.value(x)?;
        let l = g.cholesky().ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?.l();
        l.transpose().try_inverse().ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))
    }
}

/// Inverse of a small symmetric matrix held in a fixed array.
pub fn small_inverse(n: usize, g: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut out = [[0.0; 4]; 4];
    match n {
        2 => {
            let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            if det <= 0.0 {
                return None;
            }
            out[0][0] = g[1][1] / det;
            out[1][1] = g[0][0] / det;
            out[0][1] = -g[0][1] / det;
            out[1][0] = -g[1][0] / det;
            Some(out)
        }
        _ => {
            let m = DMatrix::from_fn(n, n, |i, j| g[i][j]);
            let inv = m.cholesky()?.inverse();
            for i in 0..n {
                for j in 0..n {
                    out[i][j] = inv[(i, j)];
                }
            }
            Some(out)
        }
    }
}

/// Hessian, gradient and the derived scalars of a real function.
#[derive(Clone, Debug)]
pub struct HessianReport {
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    /// `−|∇φ|⁻² D²φ(∇φ,∇φ)`, undefined when dφ = 0.
    pub lambda: Option<f64>,
    /// `|D_{∇φ}∇φ| / |∇φ|`.
    pub kappa: Option<f64>,
    /// `−|∇φ|⁻³ D²φ(∇φ,∇φ)`.
    pub mu: Option<f64>,
    /// Eigenvalues of D²φ in a g-orthonormal frame, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Gradient norm below which the differential counts as vanishing.
pub const DIFFERENTIAL_FLOOR: f64 = 1e-12;

/// `D²φ_{jk} = ∂²_{jk}φ − Γ^l_{jk} ∂_lφ` together with gradient data.
pub fn grad_hessian(metric: &ChartMetric, phi: &ScalarField, x: &[f64]) -> Result<HessianReport> {
    let n = metric.dim();
    metric.chart.require_interior(x)?;
    let f = phi.real_part()?;
    let j = f.jet(x, 2);
    let gam = metric.christoffel(x)?;
    let ginv = metric.inverse(x)?;
    let dphi = DVector::from_fn(n, |i, _| j.d(i));
    let hess = DMatrix::from_fn(n, n, |a, b| {
        let mut h = j.dd(a, b);
        for l in 0..n {
            h -= gam[idx3(n, l, a, b)] * dphi[l];
        }
        h
    });
    let grad = &ginv * &dphi;
    let g2 = dphi.dot(&grad);
    let frame = metric.orthonormal_frame(x)?;
    let hf = frame.transpose() * &hess * &frame;
    let eigenvalues = linalg::sym_eigenvalues(&hf);
    let (lambda, kappa, mu) = if g2.sqrt() > DIFFERENTIAL_FLOOR {
        let hgg = grad.dot(&(&hess * &grad));
        let w = &hess * &grad; // covector of D_{∇φ}∇φ
        let wn = w.dot(&(&ginv * &w)).sqrt();
        (Some(-hgg / g2), Some(wn / g2.sqrt()), Some(-hgg / g2.powf(1.5)))
    } else {
        (None, None, None)
    };
    Ok(HessianReport { gradient: grad.iter().copied().collect(), hessian: hess, lambda, kappa, mu, eigenvalues })
}

/// Fails with [`Error::VanishingDifferential`] when λ, κ, μ are undefined.
pub fn require_nondegenerate(r: &HessianReport, x: &[f64]) -> Result<(f64, f64, f64)> {
    match (r.lambda, r.kappa, r.mu) {
        (Some(l), Some(k), Some(m)) => Ok((l, k, m)),
        _ => Err(Error::VanishingDifferential(x.to_vec())),
    }
}

/// `⟨D_X ∇φ, Y⟩` computed from jets of the gradient vector field.
pub fn covariant_gradient_pairing(
    metric: &ChartMetric,
    phi: &ScalarField,
    x: &[f64],
    xv: &[f64],
    yv: &[f64],
) -> Result<f64> {
    let n = metric.dim();
    let f = phi.real_part()?;
    let mj = metric.jets(x, 2)?;
    let fj = f.jet(x, 2);
    let df: Vec<Jet> = (0..n).map(|i| fj.diff(i)).collect();
    let grad: Vec<Jet> = (0..n)
        .map(|i| {
            let mut acc = df[0].cst(0.0);
            for k in 0..n {
                acc = acc + mj.ginv[i * n + k].clone() * df[k].clone();
            }
            acc
        })
        .collect();
    let gam = metric.christoffel(x)?;
    let g = metric.value(x)?;
    let mut dx = vec![0.0; n];
    for (i, dxi) in dx.iter_mut().enumerate() {
        for j in 0..n {
            let mut v = grad[i].d(j);
            for k in 0..n {
                v += gam[idx3(n, i, j, k)] * grad[k].value();
            }
            *dxi += xv[j] * v;
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += g[(i, k)] * dx[i] * yv[k];
        }
    }
    Ok(s)
}

/// `Δ_g φ = |g|^{-1/2} ∂_j(|g|^{1/2} g^{jk} ∂_k φ)`.
pub fn laplace_beltrami(metric: &ChartMetric, phi: &ScalarField, x: &[f64]) -> Result<Complex64> {
    metric.chart.require_interior(x)?;
    let mj = metric.jets(x, 1)?;
    let re = laplacian_of_jet(&mj, &phi.value.re.jet(x, 2));
    let im = if phi.is_real() { 0.0 } else { laplacian_of_jet(&mj, &phi.value.im.jet(x, 2)) };
    Ok(Complex64::new(re, im))
}

/// Laplace–Beltrami from metric jets (order ≥ 1) and a function jet (order ≥ 2).
pub fn laplacian_of_jet(mj: &MetricJets, f: &Jet) -> f64 {
    let n = mj.n;
    let logdet_d: Vec<f64> = (0..n).map(|j| mj.det.d(j) / mj.det.value()).collect();
    let mut s = 0.0;
    for j in 0..n {
        for k in 0..n {
            let gi = &mj.ginv[j * n + k];
            s += gi.value() * f.dd(j, k) + gi.d(j) * f.d(k) + 0.5 * logdet_d[j] * gi.value() * f.d(k);
        }
    }
    s
}

/// Curvature tensors at a point. Index layout follows [`idx4`] / [`idx3`].
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    pub n: usize,
    pub riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
    /// Schouten tensor; `None` for n = 2.
    pub rho: Option<DMatrix<f64>>,
    /// Weyl tensor; identically zero for n = 3, `None` for n = 2.
    pub weyl: Option<Vec<f64>>,
    /// Cotton tensor; `None` for n = 2.
    pub cotton: Option<Vec<f64>>,
}

impl CurvatureReport {
    pub fn r(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.riemann[idx4(self.n, a, b, c, d)]
    }

    pub fn w(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.weyl.as_ref().map(|w| w[idx4(self.n, a, b, c, d)]).unwrap_or(0.0)
    }

    pub fn max_abs_riemann(&self) -> f64 {
        self.riemann.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct RiemannData {
    riemann: Vec<f64>,
    ricci: DMatrix<f64>,
    scalar: f64,
    g: DMatrix<f64>,
    gam: Vec<f64>,
}

fn riemann_at(metric: &ChartMetric, x: &[f64]) -> Result<RiemannData> {
    let n = metric.dim();
    let mj = metric.jets_unchecked(x, 2)?;
    let gj = mj.christoffel();
    let gam: Vec<f64> = gj.iter().map(|j| j.value()).collect();
    let dgam = |a: usize, p: usize, b: usize, c: usize| gj[idx3(n, p, b, c)].d(a);
    let g = DMatrix::from_fn(n, n, |i, j| mj.g[i * n + j].value());
    let ginv = DMatrix::from_fn(n, n, |i, j| mj.ginv[i * n + j].value());
    let mut q = vec![0.0; n * n * n * n]; // Q^p_{abc} at idx4(a,b,c,p)
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for p in 0..n {
                    let mut v = dgam(a, p, b, c) - dgam(b, p, a, c);
                    for m in 0..n {
                        v += gam[idx3(n, m, b, c)] * gam[idx3(n, p, a, m)]
                            - gam[idx3(n, m, a, c)] * gam[idx3(n, p, b, m)];
                    }
                    q[idx4(n, a, b, c, p)] = v;
                }
            }
        }
    }
    let mut riemann = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut v = 0.0;
                    for p in 0..n {
                        v += q[idx4(n, a, b, c, p)] * g[(p, d)];
                    }
                    riemann[idx4(n, a, b, c, d)] = v;
                }
            }
        }
    }
    let ricci = DMatrix::from_fn(n, n, |b, c| {
        let mut v = 0.0;
        for a in 0..n {
            for d in 0..n {
                v += ginv[(a, d)] * riemann[idx4(n, a, b, c, d)];
            }
        }
        v
    });
    let scalar = (0..n).flat_map(|b| (0..n).map(move |c| (b, c))).map(|(b, c)| ginv[(b, c)] * ricci[(b, c)]).sum();
    Ok(RiemannData { riemann, ricci, scalar, g, gam })
}

fn schouten(n: usize, d: &RiemannData) -> DMatrix<f64> {
    let nf = n as f64;
    (&d.ricci - &d.g * (d.scalar / (2.0 * (nf - 1.0)))) / (nf - 2.0)
}

/// Step used for the central differences that supply third derivatives.
pub fn third_order_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (1e-4f64).max(1e-4 * norm)
}

/// Riemann, Ricci, scalar, Schouten, Weyl and Cotton tensors.
pub fn curvature(metric: &ChartMetric, x: &[f64]) -> Result<CurvatureReport> {
    metric.chart.require_interior(x)?;
    let n = metric.dim();
    let d = riemann_at(metric, x)?;
    if n == 2 {
        return Ok(CurvatureReport {
            n,
            riemann: d.riemann,
            ricci: d.ricci,
            scalar: d.scalar,
            rho: None,
            weyl: None,
            cotton: None,
        });
    }
    let p = schouten(n, &d);
    let mut weyl = vec![0.0; n * n * n * n];
    if n >= 4 {
        let g = &d.g;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for e in 0..n {
                        weyl[idx4(n, a, b, c, e)] = d.riemann[idx4(n, a, b, c, e)]
                            + p[(a, c)] * g[(b, e)]
                            + p[(b, e)] * g[(a, c)]
                            - p[(b, c)] * g[(a, e)]
                            - p[(a, e)] * g[(b, c)];
                    }
                }
            }
        }
    }
    // ∂_a P_{bc} by central differences of second-order jets.
    let h = third_order_step(x);
    let mut dp = vec![0.0; n * n * n];
    for a in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[a] += h;
        xm[a] -= h;
        let pp = schouten(n, &riemann_at(metric, &xp)?);
        let pm = schouten(n, &riemann_at(metric, &xm)?);
        for b in 0..n {
            for c in 0..n {
                dp[idx3(n, a, b, c)] = (pp[(b, c)] - pm[(b, c)]) / (2.0 * h);
            }
        }
    }
    let gam = &d.gam;
    let mut cotton = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut v = dp[idx3(n, a, b, c)] - dp[idx3(n, b, a, c)];
                for m in 0..n {
                    v += -gam[idx3(n, m, a, c)] * p[(b, m)] + gam[idx3(n, m, b, c)] * p[(a, m)];
                }
                cotton[idx3(n, a, b, c)] = v;
            }
        }
    }
    Ok(CurvatureReport {
        n,
        riemann: d.riemann,
        ricci: d.ricci,
        scalar: d.scalar,
        rho: Some(p),
        weyl: Some(weyl),
        cotton: Some(cotton),
    })
}

/// Gaussian curvature of a surface metric, `R_{1221}/det g`.
pub fn gaussian_curvature(metric: &ChartMetric, x: &[f64]) -> Result<f64> {
    let d = riemann_at(metric, x)?;
    let det = d.g[(0, 0)] * d.g[(1, 1)] - d.g[(0, 1)] * d.g[(1, 0)];
    Ok(d.riemann[idx4(2, 0, 1, 1, 0)] / det)
}

/// Covariant derivative data of a vector field at one point.
#[derive(Clone, Debug)]
pub struct FieldSample {
    /// `(D_j X)^i` stored at `[i][j]`.
    pub dx: DMatrix<f64>,
    /// `(L_X g)_{jk}`.
    pub lie: DMatrix<f64>,
    pub divergence: f64,
    pub x_norm: f64,
}

/// Evaluates `DX` and `L_X g` for the vector field `X^i = g^{ij} X_j`.
pub fn field_sample(metric: &ChartMetric, form: &OneFormField, x: &[f64]) -> Result<FieldSample> {
    if !form.is_real() {
        return Err(Error::ComplexField);
    }
    let n = metric.dim();
    let mj = metric.jets(x, 1)?;
    let cov: Vec<Jet> = form.comps.iter().map(|c| c.re.jet(x, 1)).collect();
    let vec_field: Vec<Jet> = (0..n)
        .map(|i| {
            let mut acc = cov[0].cst(0.0);
            for k in 0..n {
                acc = acc + mj.ginv[i * n + k].clone() * cov[k].clone();
            }
            acc
        })
        .collect();
    let gam = metric.christoffel(x)?;
    let g = metric.value(x)?;
    let dx = DMatrix::from_fn(n, n, |i, j| {
        let mut v = vec_field[i].d(j);
        for k in 0..n {
            v += gam[idx3(n, i, j, k)] * vec_field[k].value();
        }
        v
    });
    // (L_X g)(∂_j, ∂_k) = ⟨D_j X, ∂_k⟩ + ⟨∂_j, D_k X⟩
    let gdx = &g * &dx; // [k][j] = g_{ki} (D_j X)^i
    let lie = DMatrix::from_fn(n, n, |j, k| gdx[(k, j)] + gdx[(j, k)]);
    let divergence = dx.trace();
    let xs: Vec<f64> = vec_field.iter().map(|v| v.value()).collect();
    let mut x2 = 0.0;
    for i in 0..n {
        for k in 0..n {
            x2 += g[(i, k)] * xs[i] * xs[k];
        }
    }
    Ok(FieldSample { dx, lie, divergence, x_norm: x2.sqrt() })
}

/// Norm of a (0,2) tensor measured with the metric.
pub fn tensor_norm_02(ginv: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let m = ginv * t * ginv;
    let mut s = 0.0;
    for a in 0..t.nrows() {
        for b in 0..t.ncols() {
            s += m[(a, b)] * t[(a, b)];
        }
    }
    s.max(0.0).sqrt()
}

/// Norm of a (1,1) tensor `T^i_j` measured with the metric.
pub fn tensor_norm_11(g: &DMatrix<f64>, ginv: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let lowered = g * t;
    tensor_norm_02(ginv, &lowered)
}

/// Result of [`field_classify`].
#[derive(Clone, Debug)]
pub struct FieldClassification {
    pub is_parallel: bool,
    pub is_killing: bool,
    pub is_conformal_killing: bool,
    /// `(2/n) div X` per sample.
    pub lambda_estimates: Vec<f64>,
    /// `‖L_X g − λ g‖` per sample.
    pub conformal_deviation: Vec<f64>,
    pub max_dx: f64,
    pub max_lie: f64,
}

/// Parallel / Killing / conformal Killing classification over sample points.
pub fn field_classify(
    metric: &ChartMetric,
    form: &OneFormField,
    samples: &[Vec<f64>],
    tol: &Tolerance,
) -> Result<FieldClassification> {
    let n = metric.dim() as f64;
    let mut out = FieldClassification {
        is_parallel: true,
        is_killing: true,
        is_conformal_killing: true,
        lambda_estimates: Vec::new(),
        conformal_deviation: Vec::new(),
        max_dx: 0.0,
        max_lie: 0.0,
    };
    for x in samples {
        let s = field_sample(metric, form, x)?;
        let g = metric.value(x)?;
        let ginv = metric.inverse(x)?;
        let dxn = tensor_norm_11(&g, &ginv, &s.dx);
        let lien = tensor_norm_02(&ginv, &s.lie);
        let lambda = 2.0 / n * s.divergence;
        let dev = tensor_norm_02(&ginv, &(&s.lie - &g * lambda));
        let scale = dxn.max(s.x_norm);
        out.is_parallel &= tol.accepts(dxn, s.x_norm);
        out.is_killing &= tol.accepts(lien, dxn);
        out.is_conformal_killing &= tol.accepts(dev, scale);
        out.max_dx = out.max_dx.max(dxn);
        out.max_lie = out.max_lie.max(lien);
        out.lambda_estimates.push(lambda);
        out.conformal_deviation.push(dev);
    }
    Ok(out)
}

/// Explicit hypersurface patch `u ↦ F(u)` with an orientation reference vector.
#[derive(Clone, Debug)]
pub struct HypersurfacePatch {
    /// `n` expressions in the `n−1` surface parameters.
    pub param: Vec<Expr>,
    /// The unit normal is chosen with positive pairing against this vector.
    pub reference: Vec<f64>,
}

/// Second fundamental form on the tangent basis and principal curvatures.
#[derive(Clone, Debug)]
pub struct SecondFundamentalForm {
    pub ell: DMatrix<f64>,
    pub induced: DMatrix<f64>,
    pub normal: Vec<f64>,
    pub principal_curvatures: Vec<f64>,
}

/// `ℓ(X,Y) = ⟨D_X N, Y⟩` on the coordinate tangent basis of the patch.
pub fn second_fundamental_form(
    metric: &ChartMetric,
    surface: &HypersurfacePatch,
    u: &[f64],
) -> Result<SecondFundamentalForm> {
    let n = metric.dim();
    let m = n - 1;
    if surface.param.len() != n || u.len() != m {
        return Err(Error::Dimension("patch must map n-1 parameters to n coordinates".into()));
    }
    let jets: Vec<Jet> = surface.param.iter().map(|e| e.jet(u, 2)).collect();
    let x: Vec<f64> = jets.iter().map(|j| j.value()).collect();
    metric.chart.require_interior(&x)?;
    let g = metric.value(&x)?;
    let gam = metric.christoffel(&x)?;
    let tangents: Vec<DVector<f64>> = (0..m).map(|a| DVector::from_fn(n, |i, _| jets[i].d(a))).collect();
    let induced = DMatrix::from_fn(m, m, |a, b| (tangents[a].transpose() * &g * &tangents[b])[(0, 0)]);
    if induced.clone().cholesky().is_none() {
        return Err(Error::Degenerate("tangent vectors are dependent".into()));
    }
    // Gram–Schmidt of the reference vector against the tangent span.
    let r = DVector::from_vec(surface.reference.clone());
    let hinv = induced.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular induced metric".into()))?;
    let pairings = DVector::from_fn(m, |a, _| (tangents[a].transpose() * &g * &r)[(0, 0)]);
    let coef = &hinv * pairings;
    let mut nvec = r.clone();
    for a in 0..m {
        nvec -= &tangents[a] * coef[a];
    }
    let nn = (nvec.transpose() * &g * &nvec)[(0, 0)].sqrt();
    if !(nn > 1e-12) {
        return Err(Error::Degenerate("reference vector is tangent".into()));
    }
    nvec /= nn;
    let gn = &g * &nvec;
    let ell = DMatrix::from_fn(m, m, |a, b| {
        let mut acc = DVector::from_fn(n, |i, _| {
            let mut e = vec![0u8; m];
            e[a] += 1;
            e[b] += 1;
            jets[i].derivative(&e)
        });
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    acc[l] += gam[idx3(n, l, j, k)] * tangents[a][j] * tangents[b][k];
                }
            }
        }
        -gn.dot(&acc)
    });
    let principal_curvatures = linalg::generalized_sym_eigenvalues(&ell, &induced)
        .ok_or_else(|| Error::Degenerate("induced metric not positive definite".into()))?;
    Ok(SecondFundamentalForm { ell, induced, normal: nvec.iter().copied().collect(), principal_curvatures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e3() -> ChartMetric {
        ChartMetric::euclidean(Chart::cube(3, 10.0))
    }

    fn log_weight(n: usize) -> ScalarField {
        let x = Expr::coords(n);
        ScalarField::real(n, Expr::dot(&x, &x).ln() * 0.5)
    }

    #[test]
    fn euclidean_christoffel_vanishes() {
        let g = e3();
        assert!(g.christoffel(&[0.3, 0.2, -1.0]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn polar_metric_christoffel() {
        let chart = Chart::new(vec![0.1, -4.0], vec![5.0, 4.0]).unwrap();
        let r = Expr::var(0);
        let g = ChartMetric::diagonal(chart, vec![Expr::one(), r.sq()]).unwrap();
        let gam = g.christoffel(&[2.0, 0.3]).unwrap();
        assert!((gam[idx3(2, 0, 1, 1)] + 2.0).abs() < 1e-14);
        assert!((gam[idx3(2, 1, 0, 1)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn exponential_product_christoffel() {
        let x = Expr::coords(3);
        let e = (x[0].clone() * 2.0).exp();
        let g = ChartMetric::diagonal(Chart::cube(3, 3.0), vec![e.clone(), e.clone(), e]).unwrap();
        let gam = g.christoffel(&[0.4, -0.2, 0.7]).unwrap();
        assert!((gam[idx3(3, 0, 0, 0)] - 1.0).abs() < 1e-13);
        assert!((gam[idx3(3, 0, 1, 1)] + 1.0).abs() < 1e-13);
        assert!((gam[idx3(3, 0, 2, 2)] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn log_weight_hessian_structure() {
        let rho: f64 = 2.0;
        let rep = grad_hessian(&e3(), &log_weight(3), &[rho, 0.0, 0.0]).unwrap();
        let ev = &rep.eigenvalues;
        assert!((ev[0] + 1.0 / rho.powi(2)).abs() < 1e-14);
        assert!((ev[1] - 1.0 / rho.powi(2)).abs() < 1e-14);
        assert!((rep.lambda.unwrap() - 1.0 / rho.powi(2)).abs() < 1e-14);
        assert!((rep.mu.unwrap() - 1.0 / rho).abs() < 1e-14);
    }

    #[test]
    fn linear_function_has_null_hessian() {
        let x = Expr::coords(3);
        let phi = ScalarField::real(3, x[0].clone() * 2.0 - x[2].clone());
        let rep = grad_hessian(&e3(), &phi, &[0.1, 0.2, 0.3]).unwrap();
        assert!(rep.hessian.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn vanishing_differential_marks_undefined() {
        let x = Expr::coords(3);
        let phi = ScalarField::real(3, Expr::dot(&x, &x));
        let rep = grad_hessian(&e3(), &phi, &[0.0, 0.0, 0.0]).unwrap();
        assert!(rep.lambda.is_none());
        assert!(require_nondegenerate(&rep, &[0.0; 3]).is_err());
    }

    #[test]
    fn laplacian_of_square_norm() {
        let x = Expr::coords(4);
        let phi = ScalarField::real(4, Expr::dot(&x, &x));
        let g = ChartMetric::euclidean(Chart::cube(4, 3.0));
        let v = laplace_beltrami(&g, &phi, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((v.re - 8.0).abs() < 1e-13);
    }

    #[test]
    fn non_interior_points_are_rejected() {
        let g = e3();
        assert!(matches!(g.christoffel(&[11.0, 0.0, 0.0]), Err(Error::NotInterior(_))));
    }

    #[test]
    fn rotation_field_is_killing_not_parallel() {
        let g = ChartMetric::euclidean(Chart::cube(2, 5.0));
        let x = Expr::coords(2);
        let form = OneFormField::real(vec![-x[1].clone(), x[0].clone()]);
        let pts = vec![vec![0.3, 0.4], vec![-1.0, 2.0]];
        let c = field_classify(&g, &form, &pts, &Tolerance::default()).unwrap();
        assert!(c.is_killing && !c.is_parallel);
    }

    #[test]
    fn round_sphere_principal_curvatures() {
        let rho = 1.5;
        let u = Expr::coords(2);
        let param = vec![
            u[0].sin() * u[1].cos() * rho,
            u[0].sin() * u[1].sin() * rho,
            u[0].cos() * rho,
        ];
        let p = HypersurfacePatch { param, reference: vec![0.0; 3] };
        let uu = [0.8, 0.3];
        let x: Vec<f64> = p.param.iter().map(|e| e.at(&uu)).collect();
        let p = HypersurfacePatch { reference: x.clone(), ..p };
        let s = second_fundamental_form(&e3(), &p, &uu).unwrap();
        for k in s.principal_curvatures {
            assert!((k - 1.0 / rho).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_curvature_sphere_has_vanishing_weyl_and_cotton() {
        // Stereographic round metric in 4D.
        let x = Expr::coords(4);
        let c = 4.0 / (1.0 + Expr::dot(&x, &x)).sq();
        let g = ChartMetric::euclidean(Chart::cube(4, 2.0)).conformal(&c);
        let r = curvature(&g, &[0.2, -0.1, 0.3, 0.05]).unwrap();
        let w = r.weyl.unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ct = r.cotton.unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(w < 1e-10, "weyl {w}");
        assert!(ct < 1e-6, "cotton {ct}");
        // Sectional curvature one: Scal = n(n-1).
        assert!((r.scalar - 12.0).abs() < 1e-10);
    }
}
