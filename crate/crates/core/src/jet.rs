//! Forward-mode differentiation.
//!
//! Two scalar types carry derivative information through ordinary arithmetic:
//!
//! * [`Dual`] holds a value and a gradient in up to [`DUAL_VARS`] variables. It is
//!   `Copy` and allocation free, and is used on hot paths such as geodesic
//!   integration where only first derivatives of the metric are needed.
//! * [`Jet`] is a multivariate truncated Taylor polynomial of arbitrary order.
//!   Order 1 and 2 jets are the classical dual and hyper-dual numbers; higher
//!   orders are used by the boundary symbol calculus.
//!
//! Both implement [`Real`], which is what expression trees are evaluated over.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

/// Scalar algebra used by generic field evaluation.
pub trait Real:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// A constant living in the same space as `self`.
    fn cst(&self, v: f64) -> Self;
    /// Point value.
    fn value(&self) -> f64;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn atan(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn powi(&self, n: i32) -> Self;
    /// Two-argument arctangent of `self` (ordinate) and `x` (abscissa).
    fn atan2(&self, x: &Self) -> Self;
}

impl Real for f64 {
    fn cst(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn atan(&self) -> Self {
        f64::atan(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn powi(&self, n: i32) -> Self {
        f64::powi(*self, n)
    }
    fn atan2(&self, x: &Self) -> Self {
        f64::atan2(*self, *x)
    }
}

// ---------------------------------------------------------------------------
// First-order dual numbers
// ---------------------------------------------------------------------------

/// Capacity of the gradient carried by [`Dual`].
pub const DUAL_VARS: usize = 4;

/// Value plus gradient with respect to at most four variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; DUAL_VARS],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; DUAL_VARS] }
    }

    /// The `i`-th coordinate function evaluated at `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; DUAL_VARS];
        d[i] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(&self, f: f64, df: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= df;
        }
        Dual { v: f, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, o: Dual) -> Dual {
        self.v += o.v;
        for i in 0..DUAL_VARS {
            self.d[i] += o.d[i];
        }
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, o: Dual) -> Dual {
        self.v -= o.v;
        for i in 0..DUAL_VARS {
            self.d[i] -= o.d[i];
        }
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        let mut d = [0.0; DUAL_VARS];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; DUAL_VARS];
        for (i, di) in d.iter_mut().enumerate() {
            *di = (self.d[i] - v * o.d[i]) * inv;
        }
        Dual { v, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, o: f64) -> Dual {
        self.v += o;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: f64) -> Dual {
        self.chain(self.v * o, o)
    }
}

impl Real for Dual {
    fn cst(&self, v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sin(&self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn atan(&self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn powf(&self, p: f64) -> Self {
        self.chain(self.v.powf(p), p * self.v.powf(p - 1.0))
    }
    fn powi(&self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(1.0);
        }
        self.chain(self.v.powi(n), n as f64 * self.v.powi(n - 1))
    }
    fn atan2(&self, x: &Self) -> Self {
        let (y, xv) = (self.v, x.v);
        let r2 = y * y + xv * xv;
        let mut d = [0.0; DUAL_VARS];
        for (i, di) in d.iter_mut().enumerate() {
            *di = (xv * self.d[i] - y * x.d[i]) / r2;
        }
        Dual { v: y.atan2(xv), d }
    }
}

// ---------------------------------------------------------------------------
// Truncated Taylor jets
// ---------------------------------------------------------------------------

/// Monomial bookkeeping for jets in `nvars` variables up to total degree `order`.
#[derive(Debug)]
pub struct JetTable {
    pub nvars: usize,
    pub order: usize,
    exps: Vec<Vec<u8>>,
    deg: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    mul: Vec<(u32, u32, u32)>,
    /// `shift[v][k]` is the index of monomial `k + e_v`, when it exists.
    shift: Vec<Vec<Option<usize>>>,
}

impl JetTable {
    fn build(nvars: usize, order: usize) -> JetTable {
        let mut exps: Vec<Vec<u8>> = Vec::new();
        // Graded order: all monomials of degree 0, then 1, ...
        for d in 0..=order {
            let mut cur = vec![0u8; nvars];
            gen_degree(nvars, d, 0, &mut cur, &mut exps);
        }
        let deg: Vec<usize> = exps.iter().map(|e| e.iter().map(|&x| x as usize).sum()).collect();
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let mut mul = Vec::new();
        for i in 0..exps.len() {
            for j in 0..exps.len() {
                if deg[i] + deg[j] <= order {
                    let k: Vec<u8> = exps[i].iter().zip(&exps[j]).map(|(a, b)| a + b).collect();
                    mul.push((i as u32, j as u32, index[&k] as u32));
                }
            }
        }
        let mut shift = vec![vec![None; exps.len()]; nvars];
        for (v, row) in shift.iter_mut().enumerate() {
            for (k, e) in exps.iter().enumerate() {
                let mut f = e.clone();
                f[v] += 1;
                row[k] = index.get(&f).copied();
            }
        }
        JetTable { nvars, order, exps, deg, index, mul, shift }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Exponent vector of the `k`-th monomial.
    pub fn exponents(&self, k: usize) -> &[u8] {
        &self.exps[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.deg[k]
    }

    /// Index of a monomial given by its exponents.
    pub fn monomial(&self, exps: &[u8]) -> Option<usize> {
        self.index.get(exps).copied()
    }
}

fn gen_degree(n: usize, d: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos == n - 1 {
        cur[pos] = d as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for k in (0..=d).rev() {
        cur[pos] = k as u8;
        gen_degree(n, d - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

fn table(nvars: usize, order: usize) -> Arc<JetTable> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("jet table cache poisoned");
    guard
        .entry((nvars, order))
        .or_insert_with(|| Arc::new(JetTable::build(nvars, order)))
        .clone()
}

/// Truncated multivariate Taylor polynomial about a base point.
///
/// Coefficient `c[k]` multiplies `(x - x0)^{e_k}`. Differentiation lowers the
/// number of trustworthy orders; `valid` tracks it and coefficients above it
/// are kept at zero.
#[derive(Clone, Debug)]
pub struct Jet {
    tab: Arc<JetTable>,
    pub c: Vec<f64>,
    valid: usize,
}

impl Jet {
    /// Constant jet in the given jet space.
    pub fn constant_in(nvars: usize, order: usize, v: f64) -> Jet {
        let tab = table(nvars, order);
        let mut c = vec![0.0; tab.len()];
        c[0] = v;
        Jet { tab, c, valid: order }
    }

    /// Coordinate variable `i` expanded at `x0`.
    pub fn var(nvars: usize, order: usize, i: usize, x0: f64) -> Jet {
        let mut j = Jet::constant_in(nvars, order, x0);
        if order >= 1 {
            let mut e = vec![0u8; nvars];
            e[i] = 1;
            let k = j.tab.monomial(&e).expect("variable monomial");
            j.c[k] = 1.0;
        }
        j
    }

    /// All coordinate variables expanded at `x0`.
    pub fn vars(x0: &[f64], order: usize) -> Vec<Jet> {
        (0..x0.len()).map(|i| Jet::var(x0.len(), order, i, x0[i])).collect()
    }

    pub fn table(&self) -> &JetTable {
        &self.tab
    }

    pub fn nvars(&self) -> usize {
        self.tab.nvars
    }

    /// Number of orders that are exact.
    pub fn valid_order(&self) -> usize {
        self.valid
    }

    fn same_space(&self, o: &Jet) {
        debug_assert!(
            self.tab.nvars == o.tab.nvars && self.tab.order == o.tab.order,
            "jets from different spaces"
        );
    }

    fn zeroed(&self) -> Jet {
        Jet { tab: self.tab.clone(), c: vec![0.0; self.c.len()], valid: self.valid }
    }

    fn truncate(&mut self) {
        if self.valid < self.tab.order {
            for k in 0..self.c.len() {
                if self.tab.deg[k] > self.valid {
                    self.c[k] = 0.0;
                }
            }
        }
    }

    /// Coefficient of the monomial with the given exponents (zero if absent).
    pub fn coeff(&self, exps: &[u8]) -> f64 {
        self.tab.monomial(exps).map(|k| self.c[k]).unwrap_or(0.0)
    }

    /// Partial derivative of the represented function at the base point for the
    /// multi-index `exps`.
    pub fn derivative(&self, exps: &[u8]) -> f64 {
        let fact: f64 = exps.iter().map(|&e| factorial(e as usize)).product();
        self.coeff(exps) * fact
    }

    /// First partial derivative at the base point.
    pub fn d(&self, i: usize) -> f64 {
        let mut e = vec![0u8; self.nvars()];
        e[i] = 1;
        self.coeff(&e)
    }

    /// Second partial derivative at the base point.
    pub fn dd(&self, i: usize, j: usize) -> f64 {
        let mut e = vec![0u8; self.nvars()];
        e[i] += 1;
        e[j] += 1;
        self.derivative(&e)
    }

    /// Gradient at the base point.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.nvars()).map(|i| self.d(i)).collect()
    }

    /// Jet of the partial derivative in variable `v`; one order is lost.
    pub fn diff(&self, v: usize) -> Jet {
        let mut out = self.zeroed();
        for k in 0..self.c.len() {
            if let Some(src) = self.tab.shift[v][k] {
                let e = self.tab.exps[src][v] as f64;
                out.c[k] = e * self.c[src];
            }
        }
        out.valid = self.valid.saturating_sub(1);
        out.truncate();
        out
    }

    /// Antiderivative in variable `v` vanishing on `x_v = x0_v`. The top degree
    /// term of the integrand falls outside the table and is dropped.
    pub fn integrate(&self, v: usize) -> Jet {
        let mut out = self.zeroed();
        for k in 0..self.c.len() {
            if let Some(dst) = self.tab.shift[v][k] {
                let e = self.tab.exps[dst][v] as f64;
                out.c[dst] = self.c[k] / e;
            }
        }
        out.valid = (self.valid + 1).min(self.tab.order);
        out.truncate();
        out
    }

    /// Evaluates the Taylor polynomial at `x0 + delta`, where the entries of
    /// `delta` are jets (of another space) with zero value.
    pub fn substitute(&self, delta: &[Jet]) -> Jet {
        assert_eq!(delta.len(), self.nvars(), "substitution arity");
        let mut out = delta[0].cst(0.0);
        let powers: Vec<Vec<Jet>> = delta
            .iter()
            .map(|d| {
                let mut p = vec![d.cst(1.0)];
                for _ in 0..self.tab.order {
                    let next = p.last().unwrap().mul_ref(d);
                    p.push(next);
                }
                p
            })
            .collect();
        for k in 0..self.c.len() {
            if self.c[k] == 0.0 {
                continue;
            }
            let mut term = delta[0].cst(self.c[k]);
            for (i, &e) in self.tab.exps[k].iter().enumerate() {
                if e > 0 {
                    term = term.mul_ref(&powers[i][e as usize]);
                }
            }
            out = out + term;
        }
        out.valid = out.valid.min(self.valid);
        out.truncate();
        out
    }

    /// Restriction to the variables in `keep` (the others frozen at the base
    /// point), re-expanded in the `keep.len()`-variable space of order `order`.
    pub fn slice(&self, keep: &[usize], order: usize) -> Jet {
        let tab = table(keep.len(), order);
        let mut c = vec![0.0; tab.len()];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut e = vec![0u8; self.nvars()];
            for (i, &v) in keep.iter().enumerate() {
                e[v] = tab.exps[k][i];
            }
            *ck = self.coeff(&e);
        }
        Jet { tab, c, valid: self.valid.min(order) }
    }

    fn is_constant(&self) -> bool {
        self.c[1..].iter().all(|&x| x == 0.0)
    }

    fn mul_ref(&self, o: &Jet) -> Jet {
        self.same_space(o);
        if o.is_constant() {
            let mut r = self.clone() * o.c[0];
            r.valid = self.valid.min(o.valid);
            r.truncate();
            return r;
        }
        if self.is_constant() {
            let mut r = o.clone() * self.c[0];
            r.valid = self.valid.min(o.valid);
            r.truncate();
            return r;
        }
        let mut out = self.zeroed();
        out.valid = self.valid.min(o.valid);
        let a = &self.c;
        let b = &o.c;
        let c = &mut out.c;
        for &(i, j, k) in &self.tab.mul {
            c[k as usize] += a[i as usize] * b[j as usize];
        }
        out.truncate();
        out
    }

    /// `sum_k coef[k] * (self - self(x0))^k`.
    fn compose(&self, coef: &[f64]) -> Jet {
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let n = coef.len() - 1;
        let mut r = self.cst(coef[n]);
        r.valid = self.valid;
        for k in (0..n).rev() {
            r = r.mul_ref(&delta);
            r.c[0] += coef[k];
        }
        r
    }

    fn order(&self) -> usize {
        self.tab.order
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, b| a * b as f64)
}

/// Taylor coefficients of `1/(1 + (a + t)^2)` in `t`, computed by series division.
fn atan_derivative_series(a: f64, n: usize) -> Vec<f64> {
    let den = [1.0 + a * a, 2.0 * a, 1.0];
    let mut s = vec![0.0; n + 1];
    for k in 0..=n {
        let mut acc = if k == 0 { 1.0 } else { 0.0 };
        for j in 1..=2.min(k) {
            acc -= den[j] * s[k - j];
        }
        s[k] = acc / den[0];
    }
    s
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.same_space(&o);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += b;
        }
        self.valid = self.valid.min(o.valid);
        self.truncate();
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        self.same_space(&o);
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a -= b;
        }
        self.valid = self.valid.min(o.valid);
        self.truncate();
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        self.mul_ref(&o)
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self.mul_ref(&o.powi(-1))
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, o: f64) -> Jet {
        self.c[0] += o;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, o: f64) -> Jet {
        for a in self.c.iter_mut() {
            *a *= o;
        }
        self
    }
}

impl Real for Jet {
    fn cst(&self, v: f64) -> Self {
        let mut c = vec![0.0; self.c.len()];
        c[0] = v;
        Jet { tab: self.tab.clone(), c, valid: self.tab.order }
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        let coef: Vec<f64> = (0..=self.order()).map(|k| e / factorial(k)).collect();
        self.compose(&coef)
    }
    fn ln(&self) -> Self {
        let a = self.c[0];
        let mut coef = vec![a.ln()];
        for k in 1..=self.order() {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            coef.push(s / (k as f64 * a.powi(k as i32)));
        }
        self.compose(&coef)
    }
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn sin(&self) -> Self {
        let a = self.c[0];
        let coef: Vec<f64> = (0..=self.order())
            .map(|k| (a + k as f64 * std::f64::consts::FRAC_PI_2).sin() / factorial(k))
            .collect();
        self.compose(&coef)
    }
    fn cos(&self) -> Self {
        let a = self.c[0];
        let coef: Vec<f64> = (0..=self.order())
            .map(|k| (a + k as f64 * std::f64::consts::FRAC_PI_2).cos() / factorial(k))
            .collect();
        self.compose(&coef)
    }
    fn atan(&self) -> Self {
        let a = self.c[0];
        let n = self.order();
        let s = atan_derivative_series(a, n);
        let mut coef = vec![a.atan()];
        for k in 1..=n {
            coef.push(s[k - 1] / k as f64);
        }
        self.compose(&coef)
    }
    fn powf(&self, p: f64) -> Self {
        let a = self.c[0];
        let mut coef = Vec::with_capacity(self.order() + 1);
        let mut binom = 1.0;
        for k in 0..=self.order() {
            coef.push(binom * a.powf(p - k as f64));
            binom *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&coef)
    }
    fn powi(&self, n: i32) -> Self {
        if n >= 0 {
            let mut r = self.cst(1.0);
            r.valid = self.valid;
            let mut base = self.clone();
            let mut e = n as u32;
            while e > 0 {
                if e & 1 == 1 {
                    r = r.mul_ref(&base);
                }
                e >>= 1;
                if e > 0 {
                    base = base.mul_ref(&base);
                }
            }
            r
        } else {
            let a = self.c[0];
            let p = n as f64;
            let mut coef = Vec::with_capacity(self.order() + 1);
            let mut binom = 1.0;
            for k in 0..=self.order() {
                coef.push(binom * a.powi(n - k as i32));
                binom *= (p - k as f64) / (k as f64 + 1.0);
            }
            self.compose(&coef)
        }
    }
    fn atan2(&self, x: &Self) -> Self {
        // atan2(y, x) = atan2(y0, x0) + atan((x0 y - y0 x) / (x0 x + y0 y)).
        let (y0, x0) = (self.c[0], x.c[0]);
        let num = self.clone() * x0 - x.clone() * y0;
        let den = x.clone() * x0 + self.clone() * y0;
        let mut t = (num / den).atan();
        t.c[0] = y0.atan2(x0);
        t
    }
}
