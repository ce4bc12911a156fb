//! The discrete singular operator L = Lap - kappa/rho^2 with homogeneous
//! Dirichlet data, in stiffness/mass form: L = -M^{-1} K.

use crate::consts::Constants;
use crate::error::{Error, Result};
use crate::grid::AngularGrid;
use crate::linalg::{solve_dense, solve_spd_tridiag, solve_tridiag};
use crate::profile::BoundaryProfile;
use std::sync::Arc;

/// Rank-one spectral modification L' = L - delta * phi <phi, .>, which moves the
/// eigenvalue of the mode phi by +delta while keeping every other eigenpair.
#[derive(Clone, Debug)]
pub struct Snap {
    pub index: usize,
    pub mode: Vec<f64>,
    pub delta: f64,
}

#[derive(Clone, Debug)]
pub struct AngularOperator {
    grid: Arc<AngularGrid>,
    consts: Constants,
    rho: Vec<f64>,
    potential: Vec<f64>,
    kd: Vec<f64>,
    ko: Vec<f64>,
    snaps: Vec<Snap>,
}

impl AngularOperator {
    pub fn from_profile(profile: &BoundaryProfile) -> Self {
        let grid = profile.grid().clone();
        let consts = *profile.constants();
        let nn = grid.len();
        let flux = grid.flux();
        let w = grid.weights();
        let rho = profile.rho().to_vec();
        let potential: Vec<f64> = rho.iter().map(|r| consts.kappa / (r * r)).collect();
        let mut kd = vec![0.0; nn];
        let mut ko = vec![0.0; nn - 1];
        for k in 0..nn {
            kd[k] = flux[k] + if k > 0 { flux[k - 1] } else { 0.0 } + w[k] * potential[k];
            if k + 1 < nn {
                ko[k] = -flux[k];
            }
        }
        AngularOperator {
            grid,
            consts,
            rho,
            potential,
            kd,
            ko,
            snaps: Vec::new(),
        }
    }

    pub fn with_snaps(&self, snaps: Vec<Snap>) -> Self {
        let mut op = self.clone();
        op.snaps = snaps;
        op
    }

    pub fn grid(&self) -> &Arc<AngularGrid> {
        &self.grid
    }
    pub fn constants(&self) -> &Constants {
        &self.consts
    }
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }
    pub fn weights(&self) -> &[f64] {
        self.grid.weights()
    }
    pub fn len(&self) -> usize {
        self.kd.len()
    }
    pub fn is_empty(&self) -> bool {
        self.kd.is_empty()
    }
    pub fn snaps(&self) -> &[Snap] {
        &self.snaps
    }
    pub(crate) fn stiffness(&self) -> (&[f64], &[f64]) {
        (&self.kd, &self.ko)
    }

    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        crate::grid::dot(self.weights(), f, g)
    }

    /// out = L' f.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        let nn = self.len();
        let w = self.weights();
        for k in 0..nn {
            let mut acc = self.kd[k] * f[k];
            if k > 0 {
                acc += self.ko[k - 1] * f[k - 1];
            }
            if k + 1 < nn {
                acc += self.ko[k] * f[k + 1];
            }
            out[k] = -acc / w[k];
        }
        for s in &self.snaps {
            let c = s.delta * self.dot(&s.mode, f);
            for k in 0..nn {
                out[k] -= c * s.mode[k];
            }
        }
    }

    /// -<L f, f> assembled as a sum of nonnegative terms.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let nn = self.len();
        let flux = self.grid.flux();
        let w = self.weights();
        let mut e = 0.0;
        for k in 0..nn {
            let right = if k + 1 < nn { u[k + 1] } else { 0.0 };
            e += flux[k] * (right - u[k]).powi(2) + w[k] * self.potential[k] * u[k] * u[k];
        }
        for s in &self.snaps {
            e += s.delta * self.dot(&s.mode, u).powi(2);
        }
        e
    }

    /// Solve (K + sigma M + snaps) x = b, where b is already in the dual
    /// (mass-weighted) representation.
    pub fn solve_dual(&self, sigma: f64, b: &[f64], work: &mut Vec<f64>) -> Result<Vec<f64>> {
        let w = self.weights();
        let nn = self.len();
        let diag: Vec<f64> = (0..nn).map(|k| self.kd[k] + sigma * w[k]).collect();
        let base = |rhs: &[f64], work: &mut Vec<f64>| -> Result<Vec<f64>> {
            if sigma >= 0.0 {
                let mut x = rhs.to_vec();
                solve_spd_tridiag(&diag, &self.ko, &mut x, work);
                Ok(x)
            } else {
                solve_tridiag(&self.ko, &diag, &self.ko, rhs)
            }
        };
        let y = base(b, work)?;
        let active: Vec<&Snap> = self.snaps.iter().filter(|s| s.delta != 0.0).collect();
        if active.is_empty() {
            return Ok(y);
        }
        let r = active.len();
        let us: Vec<Vec<f64>> = active
            .iter()
            .map(|s| s.mode.iter().zip(w).map(|(p, w)| p * w).collect())
            .collect();
        let zs: Vec<Vec<f64>> = us.iter().map(|u| base(u, work)).collect::<Result<_>>()?;
        let mut cap = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                let uz: f64 = us[i].iter().zip(&zs[j]).map(|(a, b)| a * b).sum();
                cap[i * r + j] = uz + if i == j { 1.0 / active[i].delta } else { 0.0 };
            }
        }
        let uty: Vec<f64> = us.iter().map(|u| u.iter().zip(&y).map(|(a, b)| a * b).sum()).collect();
        let coef = solve_dense(r, cap, &uty)?;
        let mut x = y;
        for j in 0..r {
            for k in 0..nn {
                x[k] -= coef[j] * zs[j][k];
            }
        }
        Ok(x)
    }

    /// Solve (L' + c) w = h.
    pub fn solve_shifted(&self, c: f64, h: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights();
        let b: Vec<f64> = h.iter().zip(w).map(|(h, w)| -h * w).collect();
        let mut work = Vec::new();
        self.solve_dual(-c, &b, &mut work)
    }

    /// Solve (L' + c) w = h on the orthogonal complement of `modes`, which must
    /// span an exact kernel direction of L' + c up to rounding. Uses a bordered
    /// dense system; h must already be orthogonal to `modes`.
    pub fn solve_shifted_deflated(&self, c: f64, h: &[f64], modes: &[&[f64]]) -> Result<Vec<f64>> {
        let nn = self.len();
        let r = modes.len();
        let m = nn + r;
        let w = self.weights();
        let mut a = vec![0.0; m * m];
        for k in 0..nn {
            a[k * m + k] = self.kd[k] - c * w[k];
            if k + 1 < nn {
                a[k * m + k + 1] = self.ko[k];
                a[(k + 1) * m + k] = self.ko[k];
            }
        }
        for s in &self.snaps {
            let u: Vec<f64> = s.mode.iter().zip(w).map(|(p, w)| p * w).collect();
            for i in 0..nn {
                for j in 0..nn {
                    a[i * m + j] += s.delta * u[i] * u[j];
                }
            }
        }
        for (j, phi) in modes.iter().enumerate() {
            for k in 0..nn {
                let v = phi[k] * w[k];
                a[k * m + nn + j] = v;
                a[(nn + j) * m + k] = v;
            }
        }
        let mut b = vec![0.0; m];
        for k in 0..nn {
            b[k] = -h[k] * w[k];
        }
        let x = solve_dense(m, a, &b)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("bordered solve produced non-finite values".into()));
        }
        Ok(x[..nn].to_vec())
    }
}
