//! The linearized operator on the half cylinder [t0, inf) x cap,
//! Lv = v_tt + L v - beta^2 v, its weighted norms and its inverse.

mod dst;
mod modal;
mod mode_ode;

pub use dst::{complement_energy_minimizer, DstSolver, MinimizerReport};
pub use modal::{
    invert_cyl_operator, solve_complement, trusted_rows, ComplementReport, CylinderSolver, InvertReport, ModalBasis, ResidualNorms,
    ORTHOGONALITY_TOLERANCE, RATE_SLACK,
};
pub use mode_ode::{solve_mode_ode, solve_mode_ode_dirichlet, TAIL_FIT_FRACTION};

use crate::error::{Error, Result};
use crate::grid::{gradient, second_derivative, AngularField, AngularGrid};
use crate::linalg::linear_fit;
use crate::operator::AngularOperator;
use crate::spectrum::Spectrum;
use serde::Serialize;
use std::sync::Arc;

/// Smallest admissible cylinder length.
pub const MIN_CYLINDER_LENGTH: f64 = 4.0;
/// Upper bound on the automatically chosen cylinder length.
pub const MAX_CYLINDER_LENGTH: f64 = 40.0;
/// Target for the decay of the truncation influence across the cylinder.
pub const TRUNCATION_TARGET: f64 = 1e-8;
/// Values below this magnitude are flushed to zero in the t recursions.
pub const FLUSH: f64 = 1e-290;

#[derive(Clone, Debug)]
pub struct CylinderGrid {
    t0: f64,
    h: f64,
    nt: usize,
    angular: Arc<AngularGrid>,
}

impl CylinderGrid {
    /// Uniform grid on [t0, t_max] with step close to `dt`, adjusted so that
    /// t_max is a node.
    pub fn build(angular: Arc<AngularGrid>, t0: f64, t_max: f64, dt: f64) -> Result<Arc<Self>> {
        if !(t0.is_finite() && t_max.is_finite()) {
            return Err(Error::Parameter("cylinder ends must be finite".into()));
        }
        if t_max - t0 < MIN_CYLINDER_LENGTH - 1e-12 {
            return Err(Error::Parameter(format!(
                "cylinder length {} is below {MIN_CYLINDER_LENGTH}",
                t_max - t0
            )));
        }
        if !(dt > 0.0) || dt > 0.25 {
            return Err(Error::Parameter(format!("time step {dt} outside (0, 0.25]")));
        }
        let cells = ((t_max - t0) / dt).round().max(8.0) as usize;
        Ok(Arc::new(CylinderGrid {
            t0,
            h: (t_max - t0) / cells as f64,
            nt: cells + 1,
            angular,
        }))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn t_max(&self) -> f64 {
        self.t(self.nt - 1)
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.h
    }
    pub fn t_nodes(&self) -> Vec<f64> {
        (0..self.nt).map(|j| self.t(j)).collect()
    }
    pub fn angular(&self) -> &Arc<AngularGrid> {
        &self.angular
    }
    pub fn nphi(&self) -> usize {
        self.angular.len()
    }
    pub fn same_shape(&self, other: &CylinderGrid) -> bool {
        self.nt == other.nt
            && self.t0 == other.t0
            && self.h == other.h
            && self.angular.same_shape(&other.angular)
    }
    /// Index of the last node with t <= `t`.
    pub fn index_at_or_below(&self, t: f64) -> usize {
        (((t - self.t0) / self.h + 1e-9).floor().max(0.0) as usize).min(self.nt - 1)
    }
}

/// Row-major samples v(t_j, phi_k).
#[derive(Clone, Debug)]
pub struct CylinderField {
    grid: Arc<CylinderGrid>,
    values: Vec<f64>,
}

impl CylinderField {
    pub fn new(grid: Arc<CylinderGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nt * grid.nphi() {
            return Err(Error::Shape(format!(
                "{} values for a {} x {} cylinder grid",
                values.len(),
                grid.nt,
                grid.nphi()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cylinder field has non-finite values".into()));
        }
        Ok(CylinderField { grid, values })
    }

    pub fn zeros(grid: Arc<CylinderGrid>) -> Self {
        let len = grid.nt * grid.nphi();
        CylinderField { grid, values: vec![0.0; len] }
    }

    /// Sample f(t_j, k) at every node.
    pub fn from_fn(grid: Arc<CylinderGrid>, f: impl Fn(f64, usize) -> f64) -> Self {
        let nphi = grid.nphi();
        let mut values = Vec::with_capacity(grid.nt * nphi);
        for j in 0..grid.nt {
            let t = grid.t(j);
            values.extend((0..nphi).map(|k| f(t, k)));
        }
        CylinderField { grid, values }
    }

    /// Separable field g(t) u(phi).
    pub fn separable(grid: Arc<CylinderGrid>, g: impl Fn(f64) -> f64, u: &[f64]) -> Self {
        Self::from_fn(grid, |t, k| g(t) * u[k])
    }

    pub fn grid(&self) -> &Arc<CylinderGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.nphi();
        &self.values[j * n..(j + 1) * n]
    }
    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.grid.nphi();
        &mut self.values[j * n..(j + 1) * n]
    }
    pub fn row_field(&self, j: usize) -> AngularField {
        AngularField::new(self.grid.angular.clone(), self.row(j).to_vec()).expect("row shape")
    }

    pub fn check(&self, other: &CylinderField) -> Result<()> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::Shape("cylinder fields live on different grids".into()));
        }
        Ok(())
    }

    /// self + a * other
    pub fn add_scaled(&self, a: f64, other: &CylinderField) -> Result<CylinderField> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        Ok(CylinderField { grid: self.grid.clone(), values })
    }

    pub fn scaled(&self, a: f64) -> CylinderField {
        CylinderField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV matrix with one row per t node and one column per angle.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("t");
        for p in self.grid.angular.nodes() {
            let _ = write!(s, ",{p:e}");
        }
        s.push('\n');
        for j in 0..self.grid.nt {
            let _ = write!(s, "{:e}", self.grid.t(j));
            for v in self.row(j) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeightedNormSpec {
    pub mu: f64,
    pub s: f64,
    pub order: usize,
}

impl WeightedNormSpec {
    pub fn new(mu: f64, s: f64, order: usize) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Parameter(format!("weight rate {mu} must be positive")));
        }
        if order > 2 {
            return Err(Error::Parameter(format!("norm order {order} exceeds 2")));
        }
        Ok(WeightedNormSpec { mu, s, order })
    }
}

const D2_END: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
const D2_NEXT: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
const D2_MID: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const D1_END: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
const D1_NEXT: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
const D1_MID: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

/// Fourth-order finite differences along t applied to every angular column.
/// `second` selects d2/dt2, otherwise d/dt.
pub fn t_derivative(v: &CylinderField, second: bool) -> CylinderField {
    let g = v.grid();
    let (nt, np, h) = (g.nt, g.nphi(), g.h);
    let scale = if second { 1.0 / (12.0 * h * h) } else { 1.0 / (12.0 * h) };
    let mut out = vec![0.0; nt * np];
    let x = v.values();
    let mut apply = |j: usize, start: usize, coef: &[f64], sign: f64, reverse: bool| {
        for (p, c) in coef.iter().enumerate() {
            let src = if reverse { start - p } else { start + p };
            let c = sign * c * scale;
            let (o, s) = (j * np, src * np);
            for k in 0..np {
                out[o + k] += c * x[s + k];
            }
        }
    };
    // Even stencils keep their sign under reflection, odd ones flip it.
    let flip = if second { 1.0 } else { -1.0 };
    let (end, next): (&[f64], &[f64]) = if second { (&D2_END, &D2_NEXT) } else { (&D1_END, &D1_NEXT) };
    apply(0, 0, end, 1.0, false);
    apply(1, 0, next, 1.0, false);
    apply(nt - 1, nt - 1, end, flip, true);
    apply(nt - 2, nt - 1, next, flip, true);
    let mid: &[f64] = if second { &D2_MID } else { &D1_MID };
    for j in 2..nt - 2 {
        apply(j, j - 2, mid, 1.0, false);
    }
    CylinderField { grid: g.clone(), values: out }
}

/// Discrete Lv = v_tt + L v - beta^2 v with fourth-order differences in t and
/// the finite-volume angular operator.
pub fn apply_cyl_operator(op: &AngularOperator, v: &CylinderField) -> Result<CylinderField> {
    if !v.grid().angular.same_shape(op.grid()) {
        return Err(Error::Shape("field and operator live on different angular grids".into()));
    }
    let beta2 = op.constants().beta.powi(2);
    let mut out = t_derivative(v, true);
    let np = v.grid().nphi();
    let mut lv = vec![0.0; np];
    for j in 0..v.grid().nt {
        op.apply(v.row(j), &mut lv);
        let row = v.row(j).to_vec();
        for (k, o) in out.row_mut(j).iter_mut().enumerate() {
            *o += lv[k] - beta2 * row[k];
        }
    }
    Ok(out)
}

/// Sup over nodes of e^{mu t} rho^{j - s} |grad^j v| for j up to the order.
/// The node next to the boundary angle is not evaluated.
pub fn weighted_norm(v: &CylinderField, spec: &WeightedNormSpec, rho: &[f64]) -> f64 {
    weighted_norm_window(v, spec, rho, 0, v.grid().nt)
}

/// [`weighted_norm`] restricted to t rows in [j0, j1).
pub fn weighted_norm_window(v: &CylinderField, spec: &WeightedNormSpec, rho: &[f64], j0: usize, j1: usize) -> f64 {
    let g = v.grid();
    let ag = g.angular.clone();
    let np = g.nphi();
    let kmax = np - 1;
    let rs: Vec<f64> = rho[..kmax].iter().map(|r| r.powf(-spec.s)).collect();
    let mut best = 0.0f64;
    let (vt, vtt) = if spec.order >= 1 {
        (Some(t_derivative(v, false)), if spec.order >= 2 { Some(t_derivative(v, true)) } else { None })
    } else {
        (None, None)
    };
    let n = ag.dimension() as f64;
    let cot: Vec<f64> = ag.nodes().iter().map(|p| p.cos() / p.sin()).collect();
    for j in j0..j1.min(g.nt) {
        let e = (spec.mu * g.t(j)).exp();
        let row = v.row(j);
        for k in 0..kmax {
            best = best.max(e * rs[k] * row[k].abs());
        }
        if let Some(vt) = &vt {
            let dphi = gradient(&ag, row, 0.0);
            let vtr = vt.row(j);
            for k in 0..kmax {
                let grad = (vtr[k] * vtr[k] + dphi[k] * dphi[k]).sqrt();
                best = best.max(e * rs[k] * rho[k] * grad);
            }
            if let Some(vtt) = &vtt {
                let dpp = second_derivative(&ag, row, 0.0);
                let dtp = gradient(&ag, vtr, 0.0);
                let vttr = vtt.row(j);
                for k in 0..kmax {
                    let tang = cot[k] * dphi[k];
                    let hess = (vttr[k].powi(2) + 2.0 * dtp[k].powi(2) + dpp[k].powi(2) + (n - 2.0) * tang * tang).sqrt();
                    best = best.max(e * rs[k] * rho[k] * rho[k] * hess);
                }
            }
        }
    }
    best
}

/// Least-squares decay rate of sup_phi rho^{-s}|v(t, .)| over rows [j0, j1).
/// Rows whose value is at or below `floor` are left out.
pub fn sup_decay_rate(v: &CylinderField, rho: &[f64], s: f64, j0: usize, j1: usize, floor: f64) -> Option<(f64, f64)> {
    let g = v.grid();
    let kmax = g.nphi() - 1;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for j in j0..j1.min(g.nt) {
        let m = v.row(j)[..kmax]
            .iter()
            .zip(rho)
            .fold(0.0f64, |a, (x, r)| a.max(x.abs() * r.powf(-s)));
        if m > floor {
            ts.push(g.t(j));
            ys.push(m.ln());
        }
    }
    if ts.len() < 3 {
        return None;
    }
    let (slope, intercept) = linear_fit(&ts, &ys);
    Some((-slope, intercept.exp()))
}

/// Cylinder length for a target rate: the influence of the truncation decays
/// like exp(-gap (T - t0)) with gap the distance from mu to the nearest
/// exponent on either side.
pub fn truncation_length(mu: f64, gammas: &[f64]) -> Result<f64> {
    let next = gammas.iter().copied().find(|&g| g > mu).ok_or_else(|| {
        Error::Resolution(format!(
            "no computed exponent exceeds mu = {mu}; increase the eigenpair count"
        ))
    })?;
    let below = gammas.iter().copied().filter(|&g| g < mu).fold(f64::NEG_INFINITY, f64::max);
    let gap = (next - mu).min(mu - below);
    let len = (-TRUNCATION_TARGET.ln()) / gap;
    Ok(len.clamp(MIN_CYLINDER_LENGTH, MAX_CYLINDER_LENGTH))
}

/// Tolerance, relative to the weighted L2 size of h, below which a projection
/// onto a resonant eigenmode counts as zero.
pub const FREDHOLM_TOLERANCE: f64 = 1e-8;

/// Solve (L + gamma^2 - beta^2) w = -h. When gamma coincides with some
/// gamma_i within `eps_res`, h must be orthogonal to those modes and the
/// solution is returned orthogonal to them.
pub fn shifted_angular_solve(spectrum: &Spectrum, h: &AngularField, gamma: f64, eps_res: f64) -> Result<AngularField> {
    let op = spectrum.operator();
    if !h.grid().same_shape(op.grid()) {
        return Err(Error::Shape("right-hand side and spectrum grids differ".into()));
    }
    let gammas = spectrum.gammas();
    if *gammas.last().unwrap() <= gamma + eps_res {
        return Err(Error::Resolution(format!(
            "the {} computed exponents do not reach gamma = {gamma}; increase the eigenpair count",
            gammas.len()
        )));
    }
    if h.values().iter().all(|&x| x == 0.0) {
        return Ok(AngularField::zeros(h.grid().clone()));
    }
    let beta = spectrum.beta();
    let c = gamma * gamma - beta * beta;
    let resonant: Vec<usize> = (0..gammas.len()).filter(|&i| (gammas[i] - gamma).abs() <= eps_res).collect();
    let size = op.dot(h.values(), h.values()).sqrt();
    let w = if resonant.is_empty() {
        let neg: Vec<f64> = h.values().iter().map(|x| -x).collect();
        op.solve_shifted(c, &neg)?
    } else {
        let mut hp = h.values().to_vec();
        for &i in &resonant {
            let proj = op.dot(spectrum.mode(i), h.values());
            if proj.abs() > FREDHOLM_TOLERANCE * size {
                return Err(Error::FredholmObstruction {
                    gamma,
                    mode: i + 1,
                    projection: proj,
                });
            }
            hp.iter_mut().zip(spectrum.mode(i)).for_each(|(a, b)| *a -= proj * b);
        }
        hp.iter_mut().for_each(|x| *x = -*x);
        let modes: Vec<&[f64]> = resonant.iter().map(|&i| spectrum.mode(i)).collect();
        op.solve_shifted_deflated(c, &hp, &modes)?
    };
    let mut lw = vec![0.0; w.len()];
    op.apply(&w, &mut lw);
    let resid: Vec<f64> = lw.iter().zip(&w).zip(h.values()).map(|((l, w), h)| l + c * w + h).collect();
    let rel = op.dot(&resid, &resid).sqrt() / size;
    if !(rel < 1e-6) {
        return Err(Error::Numeric(format!(
            "shifted solve at gamma = {gamma} left relative residual {rel:.3e}"
        )));
    }
    AngularField::new(h.grid().clone(), w)
}

#[cfg(test)]
mod tests;
