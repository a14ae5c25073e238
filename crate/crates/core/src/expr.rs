//! Analytic field expressions.
//!
//! Fields are built in code from a small algebra of nodes and evaluated over any
//! [`Real`] scalar, so the same definition yields point values, dual-number
//! gradients, or Taylor jets. Symbolic differentiation and substitution are
//! available for constructing derived fields (gauge functions, gradients of
//! potentials) without losing exact jets.

use crate::jet::{Dual, Jet, Real};
use num_complex::Complex64;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

#[derive(Debug)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Powi(Expr, i32),
    Powf(Expr, f64),
    Exp(Expr),
    Ln(Expr),
    Sqrt(Expr),
    Sin(Expr),
    Cos(Expr),
    Atan(Expr),
    Atan2(Expr, Expr),
}

/// Real-valued expression in coordinate variables `x[0], x[1], ...`.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr(Arc::new(Node::Const(v)))
    }

    pub fn var(i: usize) -> Expr {
        Expr(Arc::new(Node::Var(i)))
    }

    pub fn zero() -> Expr {
        Expr::c(0.0)
    }

    pub fn one() -> Expr {
        Expr::c(1.0)
    }

    /// Constant value if the node is a literal.
    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// True when no variable occurs in the expression.
    pub fn is_constant(&self) -> bool {
        match &*self.0 {
            Node::Const(_) => true,
            Node::Var(_) => false,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Atan2(a, b) => {
                a.is_constant() && b.is_constant()
            }
            Node::Neg(a)
            | Node::Powi(a, _)
            | Node::Powf(a, _)
            | Node::Exp(a)
            | Node::Ln(a)
            | Node::Sqrt(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Atan(a) => a.is_constant(),
        }
    }

    /// Largest variable index referenced plus one.
    pub fn arity(&self) -> usize {
        match &*self.0 {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Atan2(a, b) => {
                a.arity().max(b.arity())
            }
            Node::Neg(a)
            | Node::Powi(a, _)
            | Node::Powf(a, _)
            | Node::Exp(a)
            | Node::Ln(a)
            | Node::Sqrt(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Atan(a) => a.arity(),
        }
    }

    fn unary(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn powi(&self, n: i32) -> Expr {
        match n {
            0 => Expr::one(),
            1 => self.clone(),
            _ => match self.as_const() {
                Some(v) => Expr::c(v.powi(n)),
                None => Expr::unary(Node::Powi(self.clone(), n)),
            },
        }
    }

    pub fn powf(&self, p: f64) -> Expr {
        if p == 0.0 {
            return Expr::one();
        }
        if p == 1.0 {
            return self.clone();
        }
        match self.as_const() {
            Some(v) => Expr::c(v.powf(p)),
            None => Expr::unary(Node::Powf(self.clone(), p)),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.exp()),
            None => Expr::unary(Node::Exp(self.clone())),
        }
    }

    pub fn ln(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.ln()),
            None => Expr::unary(Node::Ln(self.clone())),
        }
    }

    pub fn sqrt(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.sqrt()),
            None => Expr::unary(Node::Sqrt(self.clone())),
        }
    }

    pub fn sin(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.sin()),
            None => Expr::unary(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.cos()),
            None => Expr::unary(Node::Cos(self.clone())),
        }
    }

    pub fn atan(&self) -> Expr {
        match self.as_const() {
            Some(v) => Expr::c(v.atan()),
            None => Expr::unary(Node::Atan(self.clone())),
        }
    }

    /// `atan2(self, x)`.
    pub fn atan2(&self, x: &Expr) -> Expr {
        match (self.as_const(), x.as_const()) {
            (Some(a), Some(b)) => Expr::c(a.atan2(b)),
            _ => Expr::unary(Node::Atan2(self.clone(), x.clone())),
        }
    }

    pub fn sq(&self) -> Expr {
        self.powi(2)
    }

    /// Evaluates over any scalar type. `x` supplies the coordinate variables.
    pub fn eval<T: Real>(&self, x: &[T]) -> T {
        match &*self.0 {
            Node::Const(v) => x[0].cst(*v),
            Node::Var(i) => x[*i].clone(),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => {
                if let Some(v) = a.as_const() {
                    b.eval(x) * v
                } else if let Some(v) = b.as_const() {
                    a.eval(x) * v
                } else {
                    a.eval(x) * b.eval(x)
                }
            }
            Node::Div(a, b) => {
                if let Some(v) = b.as_const() {
                    a.eval(x) * (1.0 / v)
                } else {
                    a.eval(x) / b.eval(x)
                }
            }
            Node::Neg(a) => -a.eval(x),
            Node::Powi(a, n) => a.eval(x).powi(*n),
            Node::Powf(a, p) => a.eval(x).powf(*p),
            Node::Exp(a) => a.eval(x).exp(),
            Node::Ln(a) => a.eval(x).ln(),
            Node::Sqrt(a) => a.eval(x).sqrt(),
            Node::Sin(a) => a.eval(x).sin(),
            Node::Cos(a) => a.eval(x).cos(),
            Node::Atan(a) => a.eval(x).atan(),
            Node::Atan2(a, b) => a.eval(x).atan2(&b.eval(x)),
        }
    }

    /// Point value.
    pub fn at(&self, x: &[f64]) -> f64 {
        if let Some(v) = self.as_const() {
            return v;
        }
        self.eval(x)
    }

    /// Value and gradient through first-order dual numbers (at most four variables).
    pub fn dual(&self, x: &[f64]) -> Dual {
        if let Some(v) = self.as_const() {
            return Dual::constant(v);
        }
        let vars: Vec<Dual> = x.iter().enumerate().map(|(i, &v)| Dual::var(v, i)).collect();
        self.eval(&vars)
    }

    /// Taylor jet of the given order at `x`.
    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        if let Some(v) = self.as_const() {
            return Jet::constant_in(x.len(), order, v);
        }
        self.eval(&Jet::vars(x, order))
    }

    /// Symbolic partial derivative with respect to variable `v`.
    pub fn diff(&self, v: usize) -> Expr {
        match &*self.0 {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => a.diff(v) + b.diff(v),
            Node::Sub(a, b) => a.diff(v) - b.diff(v),
            Node::Mul(a, b) => a.diff(v) * b.clone() + a.clone() * b.diff(v),
            Node::Div(a, b) => (a.diff(v) * b.clone() - a.clone() * b.diff(v)) / b.sq(),
            Node::Neg(a) => -a.diff(v),
            Node::Powi(a, n) => Expr::c(*n as f64) * a.powi(n - 1) * a.diff(v),
            Node::Powf(a, p) => Expr::c(*p) * a.powf(p - 1.0) * a.diff(v),
            Node::Exp(a) => self.clone() * a.diff(v),
            Node::Ln(a) => a.diff(v) / a.clone(),
            Node::Sqrt(a) => a.diff(v) / (Expr::c(2.0) * self.clone()),
            Node::Sin(a) => a.cos() * a.diff(v),
            Node::Cos(a) => -(a.sin() * a.diff(v)),
            Node::Atan(a) => a.diff(v) / (Expr::one() + a.sq()),
            Node::Atan2(y, x) => {
                (x.clone() * y.diff(v) - y.clone() * x.diff(v)) / (x.sq() + y.sq())
            }
        }
    }

    /// Replaces every variable `x[i]` by `subs[i]`.
    pub fn subst(&self, subs: &[Expr]) -> Expr {
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs[*i].clone(),
            Node::Add(a, b) => a.subst(subs) + b.subst(subs),
            Node::Sub(a, b) => a.subst(subs) - b.subst(subs),
            Node::Mul(a, b) => a.subst(subs) * b.subst(subs),
            Node::Div(a, b) => a.subst(subs) / b.subst(subs),
            Node::Neg(a) => -a.subst(subs),
            Node::Powi(a, n) => a.subst(subs).powi(*n),
            Node::Powf(a, p) => a.subst(subs).powf(*p),
            Node::Exp(a) => a.subst(subs).exp(),
            Node::Ln(a) => a.subst(subs).ln(),
            Node::Sqrt(a) => a.subst(subs).sqrt(),
            Node::Sin(a) => a.subst(subs).sin(),
            Node::Cos(a) => a.subst(subs).cos(),
            Node::Atan(a) => a.subst(subs).atan(),
            Node::Atan2(a, b) => a.subst(subs).atan2(&b.subst(subs)),
        }
    }

    /// Sum of a list of expressions.
    pub fn sum<I: IntoIterator<Item = Expr>>(it: I) -> Expr {
        it.into_iter().fold(Expr::zero(), |a, b| a + b)
    }

    /// Euclidean inner product of two expression vectors.
    pub fn dot(a: &[Expr], b: &[Expr]) -> Expr {
        Expr::sum(a.iter().zip(b).map(|(x, y)| x.clone() * y.clone()))
    }

    /// Coordinate variables `x[0..n]`.
    pub fn coords(n: usize) -> Vec<Expr> {
        (0..n).map(Expr::var).collect()
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::c(a + b),
            (Some(a), _) if a == 0.0 => o,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr(Arc::new(Node::Add(self, o))),
        }
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::c(a - b),
            (Some(a), _) if a == 0.0 => -o,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr(Arc::new(Node::Sub(self, o))),
        }
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::c(a * b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => o,
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr(Arc::new(Node::Mul(self, o))),
        }
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::c(a / b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr(Arc::new(Node::Div(self, o))),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.as_const() {
            Some(a) => Expr::c(-a),
            None => Expr(Arc::new(Node::Neg(self))),
        }
    }
}

impl Add<f64> for Expr {
    type Output = Expr;
    fn add(self, o: f64) -> Expr {
        self + Expr::c(o)
    }
}

impl Sub<f64> for Expr {
    type Output = Expr;
    fn sub(self, o: f64) -> Expr {
        self - Expr::c(o)
    }
}

impl Mul<f64> for Expr {
    type Output = Expr;
    fn mul(self, o: f64) -> Expr {
        self * Expr::c(o)
    }
}

impl Div<f64> for Expr {
    type Output = Expr;
    fn div(self, o: f64) -> Expr {
        self / Expr::c(o)
    }
}

impl Add<Expr> for f64 {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        Expr::c(self) + o
    }
}

impl Sub<Expr> for f64 {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        Expr::c(self) - o
    }
}

impl Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        Expr::c(self) * o
    }
}

impl Div<Expr> for f64 {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        Expr::c(self) / o
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::c(v)
    }
}

// ---------------------------------------------------------------------------
// Complex expressions
// ---------------------------------------------------------------------------

/// Complex-valued expression stored as a pair of real expressions.
#[derive(Clone, Debug)]
pub struct CExpr {
    pub re: Expr,
    pub im: Expr,
}

impl CExpr {
    pub fn new(re: Expr, im: Expr) -> CExpr {
        CExpr { re, im }
    }

    pub fn real(re: Expr) -> CExpr {
        CExpr { re, im: Expr::zero() }
    }

    pub fn c(z: Complex64) -> CExpr {
        CExpr { re: Expr::c(z.re), im: Expr::c(z.im) }
    }

    pub fn zero() -> CExpr {
        CExpr::real(Expr::zero())
    }

    pub fn one() -> CExpr {
        CExpr::real(Expr::one())
    }

    pub fn i() -> CExpr {
        CExpr::new(Expr::zero(), Expr::one())
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    pub fn conj(&self) -> CExpr {
        CExpr::new(self.re.clone(), -self.im.clone())
    }

    pub fn scale(&self, s: Expr) -> CExpr {
        CExpr::new(self.re.clone() * s.clone(), self.im.clone() * s)
    }

    /// `exp(re) (cos im + i sin im)`.
    pub fn exp(&self) -> CExpr {
        let m = self.re.exp();
        if self.im.is_zero() {
            return CExpr::real(m);
        }
        CExpr::new(m.clone() * self.im.cos(), m * self.im.sin())
    }

    pub fn mul_i(&self) -> CExpr {
        CExpr::new(-self.im.clone(), self.re.clone())
    }

    /// Integer power by repeated multiplication.
    pub fn powi(&self, n: u32) -> CExpr {
        let mut r = CExpr::one();
        for _ in 0..n {
            r = r * self.clone();
        }
        r
    }

    pub fn eval<T: Real>(&self, x: &[T]) -> (T, T) {
        (self.re.eval(x), self.im.eval(x))
    }

    pub fn at(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.at(x), self.im.at(x))
    }

    pub fn diff(&self, v: usize) -> CExpr {
        CExpr::new(self.re.diff(v), self.im.diff(v))
    }

    pub fn subst(&self, subs: &[Expr]) -> CExpr {
        CExpr::new(self.re.subst(subs), self.im.subst(subs))
    }

    pub fn jet(&self, x: &[f64], order: usize) -> CJet {
        CJet { re: self.re.jet(x, order), im: self.im.jet(x, order) }
    }
}

impl Add for CExpr {
    type Output = CExpr;
    fn add(self, o: CExpr) -> CExpr {
        CExpr::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for CExpr {
    type Output = CExpr;
    fn sub(self, o: CExpr) -> CExpr {
        CExpr::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for CExpr {
    type Output = CExpr;
    fn mul(self, o: CExpr) -> CExpr {
        if self.is_real() && o.is_real() {
            return CExpr::real(self.re * o.re);
        }
        CExpr::new(
            self.re.clone() * o.re.clone() - self.im.clone() * o.im.clone(),
            self.re * o.im + self.im * o.re,
        )
    }
}

impl Neg for CExpr {
    type Output = CExpr;
    fn neg(self) -> CExpr {
        CExpr::new(-self.re, -self.im)
    }
}

impl From<Expr> for CExpr {
    fn from(e: Expr) -> CExpr {
        CExpr::real(e)
    }
}

/// Complex jet: real and imaginary Taylor jets sharing a base point.
#[derive(Clone, Debug)]
pub struct CJet {
    pub re: Jet,
    pub im: Jet,
}

impl CJet {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }

    pub fn d(&self, i: usize) -> Complex64 {
        Complex64::new(self.re.d(i), self.im.d(i))
    }

    pub fn dd(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re.dd(i, j), self.im.dd(i, j))
    }

    pub fn diff(&self, v: usize) -> CJet {
        CJet { re: self.re.diff(v), im: self.im.diff(v) }
    }

    pub fn from_real(re: Jet) -> CJet {
        let im = re.cst(0.0);
        CJet { re, im }
    }

    /// Constant in the space of `like`.
    pub fn constant(like: &Jet, z: Complex64) -> CJet {
        CJet { re: like.cst(z.re), im: like.cst(z.im) }
    }

    pub fn scale(&self, s: &Jet) -> CJet {
        CJet { re: self.re.clone() * s.clone(), im: self.im.clone() * s.clone() }
    }

    pub fn mul_c(&self, z: Complex64) -> CJet {
        CJet {
            re: self.re.clone() * z.re - self.im.clone() * z.im,
            im: self.re.clone() * z.im + self.im.clone() * z.re,
        }
    }

    pub fn mul_i(&self) -> CJet {
        CJet { re: -self.im.clone(), im: self.re.clone() }
    }

    pub fn integrate(&self, v: usize) -> CJet {
        CJet { re: self.re.integrate(v), im: self.im.integrate(v) }
    }

    pub fn slice(&self, keep: &[usize], order: usize) -> CJet {
        CJet { re: self.re.slice(keep, order), im: self.im.slice(keep, order) }
    }

    pub fn substitute(&self, delta: &[Jet]) -> CJet {
        CJet { re: self.re.substitute(delta), im: self.im.substitute(delta) }
    }

    /// `exp(i θ)` for a real jet `θ`.
    pub fn cis(theta: &Jet) -> CJet {
        CJet { re: theta.cos(), im: theta.sin() }
    }
}

impl Add for CJet {
    type Output = CJet;
    fn add(self, o: CJet) -> CJet {
        CJet { re: self.re + o.re, im: self.im + o.im }
    }
}

impl Sub for CJet {
    type Output = CJet;
    fn sub(self, o: CJet) -> CJet {
        CJet { re: self.re - o.re, im: self.im - o.im }
    }
}

impl Mul for CJet {
    type Output = CJet;
    fn mul(self, o: CJet) -> CJet {
        CJet {
            re: self.re.clone() * o.re.clone() - self.im.clone() * o.im.clone(),
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl Mul<f64> for CJet {
    type Output = CJet;
    fn mul(self, s: f64) -> CJet {
        CJet { re: self.re * s, im: self.im * s }
    }
}

impl Neg for CJet {
    type Output = CJet;
    fn neg(self) -> CJet {
        CJet { re: -self.re, im: -self.im }
    }
}
