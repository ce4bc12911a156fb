//! Banded and small dense kernels shared by the solvers.

use crate::error::{Error, Result};

/// Solve a general tridiagonal system by Gaussian elimination with partial
/// pivoting. `sub[i]` couples row i+1 to column i, `sup[i]` couples row i to i+1.
pub fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut d = diag.to_vec();
    let mut u1: Vec<f64> = sup.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut l = sub.to_vec();
    let mut b = rhs.to_vec();
    let scale = diag.iter().chain(sub).chain(sup).fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n - 1 {
        if l[i].abs() > d[i].abs() {
            // swap rows i and i+1
            std::mem::swap(&mut d[i], &mut l[i]);
            let t = u1[i];
            u1[i] = d[i + 1];
            d[i + 1] = t;
            u2[i] = u1[i + 1];
            u1[i + 1] = 0.0;
            b.swap(i, i + 1);
            // row i now: d[i] (old l), u1[i] (old d[i+1]), u2[i] (old u1[i+1])
            // row i+1: l[i] (old d[i]), d[i+1] (old u1[i]), u1[i+1] = 0
        }
        if d[i] == 0.0 {
            return Err(Error::Numeric("singular tridiagonal system".into()));
        }
        let m = l[i] / d[i];
        d[i + 1] -= m * u1[i];
        u1[i + 1] -= m * u2[i];
        b[i + 1] -= m * b[i];
        l[i] = m;
    }
    if d[n - 1].abs() <= scale * 1e-300 {
        return Err(Error::Numeric("singular tridiagonal system".into()));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n >= 2 {
        x[n - 2] = (b[n - 2] - u1[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - u1[i] * x[i + 1] - u2[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}

/// Symmetric positive definite tridiagonal solve (no pivoting).
pub fn solve_spd_tridiag(diag: &[f64], off: &[f64], rhs: &mut [f64], work: &mut Vec<f64>) {
    let n = diag.len();
    work.clear();
    work.resize(n, 0.0);
    let mut piv = diag[0];
    rhs[0] /= piv;
    for i in 1..n {
        work[i] = off[i - 1] / piv;
        piv = diag[i] - off[i - 1] * work[i];
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i + 1] * rhs[i + 1];
    }
}

/// Number of eigenvalues of the symmetric tridiagonal matrix (d, e) below x.
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let qq = if q == 0.0 { f64::MIN_POSITIVE * 1e10 } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / qq;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest `count` eigenvalues of a symmetric tridiagonal matrix by bisection.
pub fn lowest_eigenvalues(d: &[f64], e: &[f64], count: usize) -> Vec<f64> {
    let n = d.len();
    let mut lo_all = f64::INFINITY;
    let mut hi_all = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo_all = lo_all.min(d[i] - r);
        hi_all = hi_all.max(d[i] + r);
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut lo = match out.last() {
            Some(&v) => v,
            None => lo_all,
        };
        let mut hi = hi_all;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if sturm_count(d, e, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()) {
                break;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

/// Least-squares line y = a + b x; returns (slope b, intercept a).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Solve a small dense system with partial-pivoting LU.
pub fn solve_dense(n: usize, a: Vec<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let m = nalgebra::DMatrix::from_row_slice(n, n, &a);
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.lu()
        .solve(&rhs)
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| Error::Numeric("singular dense system".into()))
}
