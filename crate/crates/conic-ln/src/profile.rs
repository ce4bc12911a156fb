//! The boundary defining function rho on a cap and the radial profile
//! xi = rho^{-beta}.

use crate::consts::Constants;
use crate::error::{Error, Result};
use crate::grid::{gradient, gradient_stencil, laplace_dirichlet, AngularField, AngularGrid};
use crate::linalg::{linear_fit, solve_tridiag};
use serde::Serialize;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct ProfileOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub min_damping: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            max_iterations: 100,
            tolerance: 1e-11,
            min_damping: 1.0 / 1024.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryProfile {
    grid: Arc<AngularGrid>,
    consts: Constants,
    rho: Vec<f64>,
    xi: Vec<f64>,
    boundary_slope: f64,
    residual_norm: f64,
    iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileSummary {
    pub n: usize,
    pub phi_max: f64,
    pub beta: f64,
    pub boundary_slope: f64,
    pub residual_norm: f64,
    pub node_count: usize,
}

/// Residual of rho * Lap(rho) + S rho^2 - (n/2)(|rho'|^2 - 1) at every node.
fn rho_residual(grid: &AngularGrid, c: &Constants, rho: &[f64]) -> Vec<f64> {
    let nn = grid.len();
    let mut lap = vec![0.0; nn];
    laplace_dirichlet(grid, rho, 0.0, &mut lap);
    let g = gradient(grid, rho, 0.0);
    let half_n = c.n as f64 / 2.0;
    (0..nn)
        .map(|k| rho[k] * lap[k] + c.s_const * rho[k] * rho[k] - half_n * (g[k] * g[k] - 1.0))
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One-sided derivative at phi_max from the quadratic through the last two
/// nodes and the boundary zero.
fn one_sided_slope(grid: &AngularGrid, rho: &[f64]) -> f64 {
    let nn = grid.len();
    let x = grid.nodes();
    let b = grid.phi_max();
    let (x0, x1) = (x[nn - 2], x[nn - 1]);
    let (f0, f1) = (rho[nn - 2], rho[nn - 1]);
    // derivative at b of the Lagrange quadratic through (x0,f0), (x1,f1), (b,0)
    let d0 = (b - x1) / ((x0 - x1) * (x0 - b));
    let d1 = (b - x0) / ((x1 - x0) * (x1 - b));
    f0 * d0 + f1 * d1
}

/// Solve the rho-equation with rho = 0 at phi_max and rho'(0) = 0 by damped Newton.
pub fn solve_profile(grid: &Arc<AngularGrid>, opts: &ProfileOptions) -> Result<BoundaryProfile> {
    let c = Constants::new(grid.dimension())?;
    let nn = grid.len();
    let pm = grid.phi_max();
    let mut rho: Vec<f64> = grid.nodes().iter().map(|p| (pm - p).sin()).collect();
    let mut r = rho_residual(grid, &c, &rho);
    let mut norm = max_abs(&r);
    let mut history = vec![norm];
    let flux = grid.flux();
    let w = grid.weights();
    let half_n = c.n as f64 / 2.0;
    let mut iterations = 0;
    while norm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::Convergence {
                message: "profile Newton iteration did not reach tolerance".into(),
                last_residual: norm,
                history,
                last_iterate: rho,
            });
        }
        iterations += 1;
        let mut lap = vec![0.0; nn];
        laplace_dirichlet(grid, &rho, 0.0, &mut lap);
        let g = gradient(grid, &rho, 0.0);
        let mut sub = vec![0.0; nn - 1];
        let mut diag = vec![0.0; nn];
        let mut sup = vec![0.0; nn - 1];
        for k in 0..nn {
            let left = if k > 0 { flux[k - 1] } else { 0.0 };
            let lkk = -(flux[k] + left) / w[k];
            let (dl, dc, dr) = gradient_stencil(grid, k);
            diag[k] = lap[k] + rho[k] * lkk + 2.0 * c.s_const * rho[k] - 2.0 * half_n * g[k] * dc;
            if k > 0 {
                sub[k - 1] = rho[k] * left / w[k] - 2.0 * half_n * g[k] * dl;
            }
            if k + 1 < nn {
                sup[k] = rho[k] * flux[k] / w[k] - 2.0 * half_n * g[k] * dr;
            }
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = solve_tridiag(&sub, &diag, &sup, &rhs)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = rho
                .iter()
                .zip(&step)
                .map(|(a, d)| (a + lambda * d).max(1e-12))
                .collect();
            let rt = rho_residual(grid, &c, &trial);
            let nt = max_abs(&rt);
            if nt < norm || lambda <= opts.min_damping {
                if !(nt < norm) && lambda <= opts.min_damping {
                    if nt.is_finite() && nt < 10.0 * norm {
                        rho = trial;
                        r = rt;
                        norm = nt;
                        history.push(norm);
                        break;
                    }
                    return Err(Error::Convergence {
                        message: "line search failed to reduce the rho-equation residual".into(),
                        last_residual: norm,
                        history,
                        last_iterate: rho,
                    });
                }
                rho = trial;
                r = rt;
                norm = nt;
                history.push(norm);
                break;
            }
            lambda *= 0.5;
        }
        if history.len() > 3 {
            let k = history.len();
            if history[k - 1] >= history[k - 2] * 0.999 && history[k - 2] >= history[k - 3] * 0.999 && norm < 1e3 * opts.tolerance {
                break;
            }
        }
    }
    if rho.iter().any(|&v| v <= 1e-12) {
        return Err(Error::Convergence {
            message: "profile iterate lost positivity".into(),
            last_residual: norm,
            history,
            last_iterate: rho,
        });
    }
    BoundaryProfile::from_rho_with(grid.clone(), rho, norm, iterations)
}

impl BoundaryProfile {
    /// Build a profile from given nodal values of rho (for instance a cached or
    /// closed-form one). The residual is recomputed.
    pub fn from_rho(grid: Arc<AngularGrid>, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != grid.len() {
            return Err(Error::Shape("rho has the wrong length".into()));
        }
        let c = Constants::new(grid.dimension())?;
        let norm = max_abs(&rho_residual(&grid, &c, &rho));
        Self::from_rho_with(grid, rho, norm, 0)
    }

    pub(crate) fn from_rho_with(grid: Arc<AngularGrid>, rho: Vec<f64>, residual_norm: f64, iterations: usize) -> Result<Self> {
        let consts = Constants::new(grid.dimension())?;
        if let Some(k) = rho.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("rho is not positive at node {k}")));
        }
        let xi = rho.iter().map(|r| r.powf(-consts.beta)).collect();
        let boundary_slope = one_sided_slope(&grid, &rho);
        Ok(BoundaryProfile {
            grid,
            consts,
            rho,
            xi,
            boundary_slope,
            residual_norm,
            iterations,
        })
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
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }
    pub fn rho_field(&self) -> AngularField {
        AngularField::new(self.grid.clone(), self.rho.clone()).expect("shape")
    }
    pub fn xi_field(&self) -> AngularField {
        AngularField::new(self.grid.clone(), self.xi.clone()).expect("shape")
    }
    pub fn beta(&self) -> f64 {
        self.consts.beta
    }
    pub fn s_const(&self) -> f64 {
        self.consts.s_const
    }
    pub fn boundary_slope(&self) -> f64 {
        self.boundary_slope
    }
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// min and max of rho / (phi_max - phi) over the nodes.
    pub fn comparability(&self) -> (f64, f64) {
        let d = self.grid.boundary_distance();
        self.rho
            .iter()
            .zip(&d)
            .map(|(r, d)| r / d)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), q| (lo.min(q), hi.max(q)))
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            n: self.consts.n,
            phi_max: self.grid.phi_max(),
            beta: self.consts.beta,
            boundary_slope: self.boundary_slope,
            residual_norm: self.residual_norm,
            node_count: self.grid.len(),
        }
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("phi,rho,xi\n");
        for k in 0..self.rho.len() {
            let _ = writeln!(s, "{:e},{:e},{:e}", self.grid.nodes()[k], self.rho[k], self.xi[k]);
        }
        s
    }
}

/// Pointwise residual of Lap(xi) - beta^2 xi - n(n-2)/4 xi^p at all nodes but
/// the last one. The Laplacian of xi = rho^{-beta} is discretized through rho,
/// Lap(xi) = -beta rho^{-beta-1} Lap(rho) + beta(beta+1) rho^{-beta-2} |rho'|^2,
/// which keeps the stencil away from the blow-up.
pub fn xi_residual(profile: &BoundaryProfile) -> AngularField {
    let grid = profile.grid();
    let c = profile.constants();
    let rho = profile.rho();
    let nn = grid.len();
    let mut lap = vec![0.0; nn];
    laplace_dirichlet(grid, rho, 0.0, &mut lap);
    let g = gradient(grid, rho, 0.0);
    let b = c.beta;
    let mut out = vec![0.0; nn];
    for k in 0..nn - 1 {
        let r = rho[k];
        let lap_xi = -b * r.powf(-b - 1.0) * lap[k] + b * (b + 1.0) * r.powf(-b - 2.0) * g[k] * g[k];
        let xi = profile.xi()[k];
        out[k] = lap_xi - b * b * xi - c.nonlinear_coeff() * xi.powf(c.p);
    }
    AngularField::new(grid.clone(), out).expect("shape")
}

/// Same residual with the finite-volume stencil applied to the nodal values of
/// xi directly. Its truncation error grows like d^{-7/2} toward the boundary.
pub fn xi_residual_direct(profile: &BoundaryProfile) -> AngularField {
    let grid = profile.grid();
    let c = profile.constants();
    let xi = profile.xi();
    let nn = grid.len();
    let flux = grid.flux();
    let w = grid.weights();
    let mut out = vec![0.0; nn];
    for k in 0..nn - 1 {
        let mut acc = flux[k] * (xi[k + 1] - xi[k]);
        if k > 0 {
            acc -= flux[k - 1] * (xi[k] - xi[k - 1]);
        }
        out[k] = acc / w[k] - c.beta * c.beta * xi[k] - c.nonlinear_coeff() * xi[k].powf(c.p);
    }
    AngularField::new(grid.clone(), out).expect("shape")
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupReport {
    pub slope: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Cells next to the boundary whose spacing is comparable to their distance
/// from it; power-law fits start this many nodes in.
pub const UNRESOLVED_BOUNDARY_CELLS: usize = 8;

/// Nodes used for boundary fits: one decade of the monotone quantity `d`
/// starting at the first resolved node.
pub(crate) fn boundary_decade(d: &[f64]) -> Vec<usize> {
    let nn = d.len();
    if nn <= UNRESOLVED_BOUNDARY_CELLS + 1 {
        return Vec::new();
    }
    let lo = d[nn - 1 - UNRESOLVED_BOUNDARY_CELLS];
    (0..nn - 1).filter(|&k| d[k] >= lo && d[k] <= 10.0 * lo).collect()
}

/// Log-log slope of a positive field against the distance to the boundary.
pub fn boundary_power_fit(grid: &AngularGrid, values: &[f64]) -> Result<f64> {
    let d = grid.boundary_distance();
    let idx = boundary_decade(&d);
    if idx.len() < 3 {
        return Err(Error::Diagnostic(format!(
            "only {} resolved nodes in the boundary decade",
            idx.len()
        )));
    }
    let x: Vec<f64> = idx.iter().map(|&k| d[k].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&k| values[k].abs().ln()).collect();
    Ok(linear_fit(&x, &y).0)
}

/// Fitted blow-up exponent of xi and the range of d^beta xi.
pub fn blowup_rate_check(profile: &BoundaryProfile) -> Result<BlowupReport> {
    let grid = profile.grid();
    let slope = boundary_power_fit(grid, profile.xi())?;
    let d = grid.boundary_distance();
    let beta = profile.beta();
    let nn = grid.len();
    let (c1, c2) = (0..nn - 1)
        .map(|k| d[k].powf(beta) * profile.xi()[k])
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), q| (lo.min(q), hi.max(q)));
    Ok(BlowupReport { slope, c1, c2 })
}
