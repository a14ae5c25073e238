//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{ComplexField, DMatrix, DVector};

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Eigenvalues of `a v = λ b v` for symmetric `a` and positive-definite `b`.
pub fn generalized_sym_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Vec<f64>> {
    let l = b.clone().cholesky()?.l();
    let li = l.try_inverse()?;
    Some(sym_eigenvalues(&(&li * a * li.transpose())))
}

/// Number of eigenvalues of the symmetric tridiagonal matrix `(diag, off)`
/// strictly below `x` (Sturm sequence count).
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for i in 0..diag.len() {
        let o2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { o2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by bisection on the
/// Sturm count.
pub fn tridiagonal_min_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Spectral norm of `a` by power iteration on `a* a`.
pub fn spectral_norm<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::<T>::from_fn(n, |i, _| T::from_real(1.0 + 0.01 * (i % 7) as f64));
    let mut sigma2 = 0.0;
    for _ in 0..iters {
        let nv = v.norm();
        if nv == 0.0 {
            return 0.0;
        }
        v.unscale_mut(nv);
        let av = a * &v;
        let w = a.ad_mul(&av);
        let s = w.norm();
        if (s - sigma2).abs() <= 1e-12 * s {
            sigma2 = s;
            break;
        }
        sigma2 = s;
        v = w;
    }
    sigma2.sqrt()
}

/// Outcome of [`cg_normal`].
#[derive(Clone, Debug)]
pub struct CgReport<T: ComplexField> {
    pub x: DVector<T>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients on `(A*A + λI) x = A* b`.
pub fn cg_normal<T: ComplexField<RealField = f64>>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    lambda: f64,
    rtol: f64,
    max_iter: usize,
) -> CgReport<T> {
    let n = a.ncols();
    let rhs = a.ad_mul(b);
    let apply = |v: &DVector<T>| -> DVector<T> {
        let av = a * v;
        let mut out = a.ad_mul(&av);
        out.axpy(T::from_real(lambda), v, T::one());
        out
    };
    let mut x = DVector::<T>::zeros(n);
    let mut r = rhs.clone();
    let bnorm = rhs.norm();
    if bnorm == 0.0 {
        return CgReport { x, iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut it = 0;
    while it < max_iter {
        if rr.sqrt() <= rtol * bnorm {
            break;
        }
        let ap = apply(&p);
        let pap = p.dotc(&ap).real();
        if pap <= 0.0 {
            break;
        }
        let alpha = T::from_real(rr / pap);
        x.axpy(alpha.clone(), &p, T::one());
        r.axpy(-alpha, &ap, T::one());
        let rr_new = r.norm_squared();
        let beta = T::from_real(rr_new / rr);
        p = &r + p * beta;
        rr = rr_new;
        it += 1;
    }
    let rel = rr.sqrt() / bnorm;
    CgReport { x, iterations: it, relative_residual: rel, converged: rel <= rtol }
}

/// Least-squares solve by QR with a condition-number guard on `R`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, max_cond: f64) -> Result<DVector<f64>> {
    if a.nrows() < a.ncols() {
        return Err(Error::Dimension("underdetermined least-squares system".into()));
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |m, v| m.max(*v));
    let smin = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= max_cond) {
        return Err(Error::IllConditioned(cond));
    }
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    r.solve_upper_triangular(&qtb).ok_or(Error::IllConditioned(cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_laplacian_min_eigenvalue() {
        let n = 50;
        let diag = vec![2.0; n];
        let off = vec![-1.0; n - 1];
        let expect = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((tridiagonal_min_eigenvalue(&diag, &off) - expect).abs() < 1e-12);
    }

    #[test]
    fn cg_solves_complex_system() {
        let a = DMatrix::<Complex64>::from_fn(6, 4, |i, j| Complex64::new((i + 2 * j) as f64 % 5.0 + 1.0, (i * j) as f64 * 0.1));
        let xt = DVector::<Complex64>::from_fn(4, |i, _| Complex64::new(i as f64, 1.0));
        let b = &a * &xt;
        let rep = cg_normal(&a, &b, 0.0, 1e-13, 100);
        assert!((rep.x - xt).norm() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = DMatrix::<f64>::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert!((spectral_norm(&a, 200) - 3.0).abs() < 1e-6);
    }
}
