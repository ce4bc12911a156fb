//! Scalar kernels for v'' - gamma^2 v = f on a uniform t grid, with local
//! integrals taken by Gauss quadrature on a sixth-order interpolant of f.

use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::quad::gauss_legendre;

/// Fraction of the samples, counted from the far end, used to fit the tail rate.
pub const TAIL_FIT_FRACTION: f64 = 0.1;
const STENCIL: usize = 6;
const GAUSS_POINTS: usize = 8;

struct LocalIntegrals {
    /// int_{t_j}^{t_{j+1}} e^{-gamma (t_{j+1} - s)} f(s) ds
    forward: Vec<f64>,
    /// int_{t_j}^{t_{j+1}} e^{-gamma (s - t_j)} f(s) ds
    backward: Vec<f64>,
    /// int_{t_j}^{t_{j+1}} e^{gamma (s - t_j)} f(s) ds
    growing: Vec<f64>,
}

fn lagrange(x: f64) -> [f64; STENCIL] {
    let mut l = [1.0; STENCIL];
    for (p, lp) in l.iter_mut().enumerate() {
        for q in 0..STENCIL {
            if q != p {
                *lp *= (x - q as f64) / (p as f64 - q as f64);
            }
        }
    }
    l
}

fn local_integrals(gamma: f64, f: &[f64], h: f64) -> LocalIntegrals {
    let m = f.len();
    let (gx, gw) = gauss_legendre(GAUSS_POINTS);
    let tau: Vec<f64> = gx.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let wts: Vec<f64> = gw.iter().map(|w| 0.5 * w * h).collect();
    // Combined weights per offset of the interval inside its stencil.
    let mut table = Vec::with_capacity(STENCIL - 1);
    for off in 0..STENCIL - 1 {
        let mut wf = [0.0; STENCIL];
        let mut wb = [0.0; STENCIL];
        let mut wg = [0.0; STENCIL];
        for q in 0..GAUSS_POINTS {
            let l = lagrange(off as f64 + tau[q]);
            let kf = wts[q] * (-gamma * h * (1.0 - tau[q])).exp();
            let kb = wts[q] * (-gamma * h * tau[q]).exp();
            let kg = wts[q] * (gamma * h * tau[q]).exp();
            for p in 0..STENCIL {
                wf[p] += kf * l[p];
                wb[p] += kb * l[p];
                wg[p] += kg * l[p];
            }
        }
        table.push((wf, wb, wg));
    }
    let mut out = LocalIntegrals {
        forward: vec![0.0; m - 1],
        backward: vec![0.0; m - 1],
        growing: vec![0.0; m - 1],
    };
    for j in 0..m - 1 {
        let start = j.saturating_sub(2).min(m - STENCIL);
        let (wf, wb, wg) = &table[j - start];
        let fs = &f[start..start + STENCIL];
        out.forward[j] = wf.iter().zip(fs).map(|(a, b)| a * b).sum();
        out.backward[j] = wb.iter().zip(fs).map(|(a, b)| a * b).sum();
        out.growing[j] = wg.iter().zip(fs).map(|(a, b)| a * b).sum();
    }
    out
}

fn check_input(gamma: f64, f: &[f64], h: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma = {gamma} must be positive")));
    }
    if !(h > 0.0) {
        return Err(Error::Parameter("time step must be positive".into()));
    }
    if f.len() < 2 * STENCIL {
        return Err(Error::Parameter(format!("need at least {} samples", 2 * STENCIL)));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite forcing samples".into()));
    }
    Ok(())
}

/// Fitted decay rate of the last samples; None when the tail vanishes.
fn tail_rate(f: &[f64], t0: f64, h: f64) -> Result<Option<f64>> {
    let m = f.len();
    let count = ((m as f64 * TAIL_FIT_FRACTION).ceil() as usize).max(5).min(m);
    let tail = &f[m - count..];
    if tail.iter().all(|&x| x == 0.0) {
        return Ok(None);
    }
    let sign = tail[count - 1].signum();
    if tail.iter().any(|&x| x == 0.0 || x.signum() != sign) {
        return Err(Error::Diagnostic("forcing tail changes sign; cannot fit a decay rate".into()));
    }
    let ts: Vec<f64> = (m - count..m).map(|j| t0 + j as f64 * h).collect();
    let ys: Vec<f64> = tail.iter().map(|x| x.abs().ln()).collect();
    Ok(Some(-linear_fit(&ts, &ys).0))
}

/// The decaying solution v(t) = int_t^inf sinh(gamma (s - t)) f(s) ds / gamma of
/// v'' - gamma^2 v = f, for f sampled at t0 + j h. Beyond the last sample f is
/// continued as f(T) e^{-mu (t - T)} with mu fitted on the tail.
pub fn solve_mode_ode(gamma: f64, f: &[f64], t0: f64, h: f64) -> Result<Vec<f64>> {
    check_input(gamma, f, h)?;
    let m = f.len();
    let (a_tail, b_tail) = match tail_rate(f, t0, h)? {
        None => (0.0, 0.0),
        Some(mu) if mu > gamma => (f[m - 1] / (mu - gamma), f[m - 1] / (mu + gamma)),
        Some(mu) => return Err(Error::Rate { fitted: mu, required: gamma }),
    };
    let li = local_integrals(gamma, f, h);
    let up = (gamma * h).exp();
    let down = (-gamma * h).exp();
    let mut a = a_tail;
    let mut b = b_tail;
    let mut v = vec![0.0; m];
    v[m - 1] = (a - b) / (2.0 * gamma);
    for j in (0..m - 1).rev() {
        a = li.growing[j] + up * a;
        b = li.backward[j] + down * b;
        v[j] = (a - b) / (2.0 * gamma);
    }
    Ok(v)
}

/// Solution of v'' - gamma^2 v = f on [t0, T] with v(t0) = v(T) = 0.
pub fn solve_mode_ode_dirichlet(gamma: f64, f: &[f64], t0: f64, h: f64) -> Result<Vec<f64>> {
    check_input(gamma, f, h)?;
    let _ = t0;
    let m = f.len();
    let li = local_integrals(gamma, f, h);
    let down = (-gamma * h).exp();
    let mut p = vec![0.0; m];
    for j in 0..m - 1 {
        p[j + 1] = down * p[j] + li.forward[j];
    }
    let mut q = vec![0.0; m];
    for j in (0..m - 1).rev() {
        q[j] = li.backward[j] + down * q[j + 1];
    }
    let mut v: Vec<f64> = p.iter().zip(&q).map(|(p, q)| -(p + q) / (2.0 * gamma)).collect();
    let len = (m - 1) as f64 * h;
    let d = (-gamma * len).exp();
    let (v0, vt) = (v[0], v[m - 1]);
    let alpha = (-v0 + d * vt) / (1.0 - d * d);
    let beta = (-vt + d * v0) / (1.0 - d * d);
    for (j, x) in v.iter_mut().enumerate() {
        let s = j as f64 * h;
        *x += alpha * (-gamma * s).exp() + beta * (-gamma * (len - s)).exp();
    }
    v[0] = 0.0;
    v[m - 1] = 0.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(t0: f64, h: f64, m: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..m).map(|j| f(t0 + j as f64 * h)).collect()
    }

    #[test]
    fn exponential_forcing_matches_closed_form() {
        let (t0, h) = (1.0, 0.02);
        let m = 1001;
        let f = samples(t0, h, m, |t| (-2.0 * t).exp());
        let v = solve_mode_ode(1.0, &f, t0, h).unwrap();
        for j in 0..=500 {
            let t = t0 + j as f64 * h;
            let want = (-2.0 * t).exp() / 3.0;
            assert!(((v[j] - want) / want).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn polynomial_exponential_forcing() {
        // v'' - v = t e^{-3t} has the particular solution e^{-3t}(t/8 + 3/32).
        let (t0, h) = (0.5, 0.01);
        let f = samples(t0, h, 2001, |t| t * (-3.0 * t).exp());
        let v = solve_mode_ode(1.0, &f, t0, h).unwrap();
        for j in 0..=1000 {
            let t = t0 + j as f64 * h;
            let want = (-3.0 * t).exp() * (t / 8.0 + 3.0 / 32.0);
            assert!((v[j] - want).abs() < 1e-7 * want.abs(), "t={t}: {} vs {want}", v[j]);
        }
    }

    #[test]
    fn zero_forcing_and_rate_error() {
        let f = vec![0.0; 100];
        assert!(solve_mode_ode(1.0, &f, 0.0, 0.05).unwrap().iter().all(|&x| x == 0.0));
        let slow = samples(0.0, 0.05, 200, |t| (-0.5 * t).exp());
        assert!(matches!(solve_mode_ode(1.0, &slow, 0.0, 0.05), Err(Error::Rate { .. })));
    }

    #[test]
    fn dirichlet_variant_vanishes_at_ends_and_solves() {
        let (t0, h, gamma, mu) = (1.0, 0.01, 3.0, 2.0);
        let f = samples(t0, h, 801, |t| (-mu * t).exp());
        let v = solve_mode_ode_dirichlet(gamma, &f, t0, h).unwrap();
        let len = 8.0;
        let c = 1.0 / (mu * mu - gamma * gamma);
        // Exact: c e^{-mu t} + A e^{-gamma (t - t0)} + B e^{-gamma (T - t)}.
        let (p0, pt) = (c * (-mu * t0).exp(), c * (-mu * (t0 + len)).exp());
        let d = (-gamma * len).exp();
        let a = (-p0 + d * pt) / (1.0 - d * d);
        let b = (-pt + d * p0) / (1.0 - d * d);
        for j in 0..801 {
            let t = t0 + j as f64 * h;
            let want = c * (-mu * t).exp() + a * (-gamma * (t - t0)).exp() + b * (-gamma * (t0 + len - t)).exp();
            assert!((v[j] - want).abs() < 1e-10 * p0.abs(), "t={t}");
        }
    }
}
