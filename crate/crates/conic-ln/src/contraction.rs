//! The fixed-point map w -> L^{-1}[P(w) - N(vhat)] on the half cylinder, an
//! independent Newton solver for the full equation, and helpers to read decay
//! rates and cone values off a solution.

use crate::cylinder::{
    t_derivative, trusted_rows, truncation_length, weighted_norm_window, CylinderField, CylinderGrid, CylinderSolver,
    DstSolver, InvertReport, WeightedNormSpec,
};
use crate::error::{Error, Result};
use crate::expansion::{assumption_check, nonlinear_residual_expansion, terms_on_grid, AssumptionReport, Expansion};
use crate::grid::{extrapolate_to_boundary, gradient, second_derivative};
use crate::index_set::IndexChain;
use crate::linalg::linear_fit;
use crate::operator::AngularOperator;
use crate::profile::{xi_residual, BoundaryProfile};
use crate::quad::gauss_legendre;
use crate::spectrum::decay_slope_against_rho;
use serde::Serialize;
use std::sync::Arc;

/// N(v) = v_tt + Lap v - beta^2 v - n(n-2)/4 v^p on the cylinder grid.
///
/// v is written as xi g so that only the bounded factor g is differenced; the
/// last angular node is not evaluated and carries zero.
pub fn nonlinear_residual(v: &CylinderField, profile: &BoundaryProfile) -> Result<CylinderField> {
    let grid = v.grid().clone();
    let ag = grid.angular();
    if !ag.same_shape(profile.grid()) {
        return Err(Error::Shape("field and profile grids differ".into()));
    }
    let c = profile.constants();
    let (b, p) = (c.beta, c.p);
    let xi = profile.xi();
    let rho = profile.rho();
    let nn = ag.len();
    for j in 0..grid.nt() {
        if let Some(k) = v.row(j).iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Domain(format!(
                "v = {} is not positive at t = {}, phi = {}",
                v.row(j)[k],
                grid.t(j),
                ag.nodes()[k]
            )));
        }
    }
    let rxi = xi_residual(profile);
    let drho = gradient(ag, rho, 0.0);
    let cot: Vec<f64> = ag.nodes().iter().map(|x| x.cos() / x.sin()).collect();
    let n = c.n as f64;
    let mut g = CylinderField::zeros(grid.clone());
    for j in 0..grid.nt() {
        for (k, (o, x)) in g.row_mut(j).iter_mut().zip(v.row(j)).enumerate() {
            *o = x / xi[k];
        }
    }
    let gtt = t_derivative(&g, true);
    let mut out = CylinderField::zeros(grid.clone());
    for j in 0..grid.nt() {
        let gr = g.row(j);
        let gb = extrapolate_to_boundary(ag, gr);
        let d1 = gradient(ag, gr, gb);
        let d2 = second_derivative(ag, gr, gb);
        let tt = gtt.row(j);
        let row = out.row_mut(j);
        for k in 0..nn - 1 {
            let lap_g = d2[k] + (n - 2.0) * cot[k] * d1[k];
            let dxi = -b * xi[k] * drho[k] / rho[k];
            let xp = xi[k].powf(p);
            row[k] = gr[k] * rxi.values()[k]
                + c.nonlinear_coeff() * xp * (gr[k] - gr[k].powf(p))
                + 2.0 * dxi * d1[k]
                + xi[k] * (lap_g + tt[k]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PicardOptions {
    pub dt: f64,
    /// Cylinder length; by default long enough that truncation effects decay
    /// by 1e-8 at the spectral gap around mu.
    pub length: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_escalations: usize,
    /// Largest accepted a-priori contraction estimate before t0 is increased.
    pub ball_threshold: f64,
    pub assumption_window: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            dt: 0.0125,
            length: None,
            tolerance: 1e-10,
            max_iterations: 60,
            max_escalations: 6,
            ball_threshold: 0.5,
            assumption_window: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub norm: f64,
    pub correction: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// None when the difference is below the floor everywhere.
    pub rate: Option<f64>,
    pub prefactor: Option<f64>,
    pub window: (f64, f64),
    pub rows_used: usize,
    pub floor_warning: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub mu: f64,
    pub t0_requested: f64,
    pub t0_used: f64,
    pub escalations: usize,
    pub t_max: f64,
    pub trusted_until: f64,
    /// sup |omega| / xi at t0.
    pub epsilon_t0: f64,
    /// Norm bound of the linear inverse measured on the first solve.
    pub inverse_bound: f64,
    /// A-priori contraction estimate C sup rho^2 |dP/dw| at t0.
    pub ball_estimate: f64,
    pub k_constant: f64,
    pub iterates: Vec<IterationRecord>,
    /// Largest correction ratio over the last iterations.
    pub lambda: f64,
    /// (mu, s-2, 0) norm of L w - P(w) + N(vhat) with the explicit stencil.
    pub final_residual: f64,
    /// Same residual relative to the norm of N(vhat).
    pub final_residual_relative: f64,
    /// Residual of the last linear solve in its own discretization.
    pub solve_residual: f64,
    pub decay_fit: DecayFit,
    /// Slope of log|v - vhat| against log rho at the start of the fit window.
    pub rho_slope: Option<f64>,
    pub converged: bool,
    pub assumptions: AssumptionReport,
}

/// Converged fixed point together with everything needed downstream.
#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub w: CylinderField,
    /// vhat = xi + omega sampled on the same grid.
    pub vhat: CylinderField,
    pub report: ContractionReport,
}

impl PicardSolution {
    pub fn v(&self) -> CylinderField {
        self.vhat.add_scaled(1.0, &self.w).expect("same grid")
    }
}

struct Nonlinearity {
    kappa: f64,
    q: f64,
    rho: Vec<f64>,
    xi: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Nonlinearity {
    fn new(op: &AngularOperator) -> Self {
        let c = op.constants();
        let (x, w) = gauss_legendre(8);
        Nonlinearity {
            kappa: c.kappa,
            q: c.q(),
            rho: op.rho().to_vec(),
            xi: op.rho().iter().map(|r| r.powf(-c.beta)).collect(),
            nodes: x.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: w.iter().map(|w| 0.5 * w).collect(),
        }
    }

    /// P(w) = w Q with Q = kappa rho^{-2} int_0^1 ((1 + (omega + tau w)/xi)^q - 1) dtau.
    fn apply(&self, omega: &CylinderField, w: &CylinderField) -> Result<CylinderField> {
        let grid = w.grid().clone();
        let mut out = CylinderField::zeros(grid.clone());
        for j in 0..grid.nt() {
            let (om, wr) = (omega.row(j), w.row(j));
            let row = out.row_mut(j);
            for k in 0..self.xi.len() {
                let (a, b) = (om[k] / self.xi[k], wr[k] / self.xi[k]);
                let mut integral = 0.0;
                for (tau, wt) in self.nodes.iter().zip(&self.weights) {
                    let x = a + tau * b;
                    if !(x > -1.0) {
                        return Err(Error::Domain(format!(
                            "vhat + tau w leaves the positive cone at t = {}, node {k}",
                            grid.t(j)
                        )));
                    }
                    integral += wt * (self.q * x.ln_1p()).exp_m1();
                }
                row[k] = wr[k] * self.kappa * integral / (self.rho[k] * self.rho[k]);
            }
        }
        Ok(out)
    }

    /// sup rho^2 |dP/dw| at w = 0 on row j.
    fn derivative_sup(&self, omega: &CylinderField, j: usize) -> f64 {
        omega
            .row(j)
            .iter()
            .zip(&self.xi)
            .map(|(o, x)| self.kappa * (self.q * (o / x).ln_1p()).exp_m1().abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares rate and prefactor of sup rho^{-s}|d| over the rows of the
/// window whose size exceeds the per-node floor.
pub fn decay_fit_difference(
    d: &CylinderField,
    rho: &[f64],
    s: f64,
    window: (f64, f64),
    floor: Option<&CylinderField>,
) -> Result<DecayFit> {
    let grid = d.grid();
    if !(window.1 > window.0) || window.0 < grid.t0() - 1e-12 || window.1 > grid.t_max() + 1e-12 {
        return Err(Error::Range(format!(
            "fit window [{}, {}] not inside [{}, {}]",
            window.0,
            window.1,
            grid.t0(),
            grid.t_max()
        )));
    }
    let kmax = grid.nphi() - 1;
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    let mut below = 0;
    for j in 0..grid.nt() {
        let t = grid.t(j);
        if t < window.0 - 1e-12 || t > window.1 + 1e-12 {
            continue;
        }
        let row = d.row(j);
        let mut m = 0.0f64;
        let mut resolved = false;
        for k in 0..kmax {
            let x = row[k].abs() * rho[k].powf(-s);
            let fl = floor.map_or(0.0, |f| f.row(j)[k].abs() * rho[k].powf(-s));
            if x > fl && x > 0.0 {
                m = m.max(x);
                resolved = true;
            }
        }
        if resolved {
            ts.push(t);
            ys.push(m.ln());
        } else {
            below += 1;
        }
    }
    if ts.len() < 3 {
        return Ok(DecayFit {
            rate: None,
            prefactor: None,
            window,
            rows_used: ts.len(),
            floor_warning: true,
        });
    }
    let (slope, intercept) = linear_fit(&ts, &ys);
    Ok(DecayFit {
        rate: Some(-slope),
        prefactor: Some(intercept.exp()),
        window,
        rows_used: ts.len(),
        floor_warning: below > 0,
    })
}

/// Decay of rho^{-s}|v - vhat| in t. Nodes where the difference is at the
/// rounding level of v are left out, and rows without any resolved node are
/// flagged.
pub fn decay_fit(
    v: &CylinderField,
    vhat: &Expansion,
    profile: &BoundaryProfile,
    window: (f64, f64),
) -> Result<DecayFit> {
    let grid = v.grid().clone();
    let xi = profile.xi();
    let om = vhat.omega_on(&grid);
    let mut d = CylinderField::zeros(grid.clone());
    for j in 0..grid.nt() {
        let (vr, orow) = (v.row(j), om.row(j));
        for (k, x) in d.row_mut(j).iter_mut().enumerate() {
            *x = vr[k] - xi[k] - orow[k];
        }
    }
    let floor = v.scaled(FLOOR_RELATIVE);
    decay_fit_difference(&d, profile.rho(), profile.constants().s, window, Some(&floor))
}

/// Size of v - vhat, relative to v, below which a node counts as unresolved.
pub const FLOOR_RELATIVE: f64 = 1e-12;

fn weighted(v: &CylinderField, mu: f64, s: f64, rho: &[f64], j0: usize, j1: usize) -> f64 {
    weighted_norm_window(v, &WeightedNormSpec { mu, s, order: 0 }, rho, j0, j1)
}

struct Attempt {
    w: CylinderField,
    omega: CylinderField,
    iterates: Vec<IterationRecord>,
    last: InvertReport,
    first_bound: f64,
    rhat_norm: f64,
    rhat: CylinderField,
}

fn iterate(
    solver: &CylinderSolver,
    chain: &IndexChain,
    vhat: &Expansion,
    mu: f64,
    grid: &Arc<CylinderGrid>,
    opts: &PicardOptions,
) -> Result<Attempt> {
    let sp = solver.spectrum();
    let op = sp.operator();
    let rho = op.rho();
    let s = op.constants().s;
    let end = trusted_rows(grid);
    let res = nonlinear_residual_expansion(&vhat.with_reference_time(grid.t0()), mu)?;
    let rhat = terms_on_grid(&res.above, grid);
    let omega = vhat.omega_on(grid);
    let nl = Nonlinearity::new(op);
    let rhat_norm = weighted(&rhat, mu, s - 2.0, rho, 0, end);
    let mut w = CylinderField::zeros(grid.clone());
    let mut iterates = Vec::new();
    let mut increasing = 0;
    let mut first_bound = None;
    let mut prev_corr: Option<f64> = None;
    for k in 0..opts.max_iterations {
        let f = nl.apply(&omega, &w)?.add_scaled(-1.0, &rhat)?;
        let (next, rep) = solver.invert(chain, &f, mu)?;
        first_bound.get_or_insert(rep.norm_bound);
        let corr = weighted(&next.add_scaled(-1.0, &w)?, mu, s, rho, 0, end);
        let norm = weighted(&next, mu, s, rho, 0, end);
        let ratio = prev_corr.filter(|&p| p > 0.0).map(|p| corr / p);
        iterates.push(IterationRecord { norm, correction: corr, ratio });
        w = next;
        if corr <= opts.tolerance * norm.max(f64::MIN_POSITIVE) || corr == 0.0 {
            return Ok(Attempt {
                w,
                omega,
                iterates,
                last: rep,
                first_bound: first_bound.unwrap_or(0.0),
                rhat_norm,
                rhat,
            });
        }
        increasing = if ratio.is_some_and(|r| r >= 1.0) { increasing + 1 } else { 0 };
        if increasing >= 5 {
            return Err(Error::NonContraction(format!(
                "correction grew for 5 consecutive iterations (last ratio {:.3}) at t0 = {}",
                ratio.unwrap_or(f64::NAN),
                grid.t0()
            )));
        }
        prev_corr = Some(corr);
        if k + 1 == opts.max_iterations {
            return Err(Error::Convergence {
                message: format!("Picard iteration did not reach {:e} in {} steps", opts.tolerance, opts.max_iterations),
                last_residual: corr,
                history: iterates.iter().map(|r| r.correction).collect(),
                last_iterate: w.into_values(),
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Solve N(vhat + w) = 0 for w decaying at rate mu, starting at t0 and
/// moving t0 up by one while the contraction estimate fails.
pub fn picard_solve(
    vhat: &Expansion,
    chain: &IndexChain,
    mu: f64,
    t0: f64,
    opts: &PicardOptions,
) -> Result<PicardSolution> {
    let m = chain.membership(mu)?;
    if m.in_set {
        return Err(Error::Precondition(format!(
            "mu = {mu} lies in the index set (nearest value {}); choose a different mu",
            m.nearest
        )));
    }
    let sp = vhat.spectrum();
    let op = sp.operator();
    let rho = op.rho();
    let s = op.constants().s;
    let solver = CylinderSolver::new(sp)?;
    let length = match opts.length {
        Some(l) => l,
        None => truncation_length(mu, sp.gammas())?,
    };
    let nl = Nonlinearity::new(op);
    let mut t = t0;
    let mut escalations = 0;
    loop {
        let assumptions = assumption_check(vhat, mu, (t, t + opts.assumption_window))?;
        let grid = CylinderGrid::build(sp.grid().clone(), t, t + length, opts.dt)?;
        let omega = vhat.omega_on(&grid);
        let attempt = if assumptions.passes {
            Some(iterate(&solver, chain, vhat, mu, &grid, opts))
        } else {
            None
        };
        let ball = |bound: f64| bound * nl.derivative_sup(&omega, 0);
        let retry = match &attempt {
            None => true,
            Some(Ok(a)) => ball(a.first_bound) > opts.ball_threshold,
            Some(Err(Error::NonContraction(_) | Error::Domain(_))) => true,
            Some(Err(_)) => false,
        };
        if retry && escalations < opts.max_escalations {
            escalations += 1;
            t += 1.0;
            continue;
        }
        let a = match attempt {
            Some(r) => r?,
            None => {
                return Err(Error::Precondition(format!(
                    "smallness and decay assumptions fail on [{t}, {}]",
                    t + opts.assumption_window
                )))
            }
        };
        if retry {
            return Err(Error::NonContraction(format!(
                "contraction estimate {:.3} above {} after {escalations} increases of t0",
                ball(a.first_bound),
                opts.ball_threshold
            )));
        }
        let end = trusted_rows(&grid);
        let pw = nl.apply(&a.omega, &a.w)?;
        let lw = crate::cylinder::apply_cyl_operator(op, &a.w)?;
        let r = lw.add_scaled(-1.0, &pw)?.add_scaled(1.0, &a.rhat)?;
        let final_residual = weighted(&r, mu, s - 2.0, rho, 1, end);
        let late: Vec<f64> = a.iterates.iter().rev().take(5).filter_map(|r| r.ratio).collect();
        let lambda = late.iter().copied().fold(0.0, f64::max);
        let fit_end = (t + 7.0).min(grid.t(end - 1));
        let decay = decay_fit_difference(&a.w, rho, s, (t + 1.0, fit_end), None)?;
        let jr = grid.index_at_or_below(t + 1.0);
        let rho_slope = if a.w.row(jr).iter().any(|&x| x != 0.0) {
            decay_slope_against_rho(rho, a.w.row(jr)).ok()
        } else {
            None
        };
        let converged = final_residual.is_finite() && lambda < 1.0;
        let report = ContractionReport {
            mu,
            t0_requested: t0,
            t0_used: t,
            escalations,
            t_max: grid.t_max(),
            trusted_until: grid.t(end - 1),
            epsilon_t0: assumptions.x0,
            inverse_bound: a.first_bound,
            ball_estimate: ball(a.first_bound),
            k_constant: assumptions.k_constant,
            iterates: a.iterates,
            lambda,
            final_residual,
            final_residual_relative: if a.rhat_norm > 0.0 { final_residual / a.rhat_norm } else { 0.0 },
            solve_residual: a.last.residual_norms.weighted,
            decay_fit: decay,
            rho_slope,
            converged,
            assumptions,
        };
        let mut vh = a.omega;
        let xi = vhat.xi();
        for j in 0..grid.nt() {
            vh.row_mut(j).iter_mut().zip(&xi).for_each(|(o, x)| *o += x);
        }
        return Ok(PicardSolution { w: a.w, vhat: vh, report });
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub inner_iterations: usize,
}

const NEWTON_MAX: usize = 30;
const NEWTON_TOLERANCE: f64 = 1e-12;
const INNER_MAX: usize = 200;
const INNER_TOLERANCE: f64 = 1e-11;

struct NewtonSystem<'a> {
    op: &'a AngularOperator,
    xi: Vec<f64>,
    xip: Vec<f64>,
    dcoef: Vec<f64>,
    coeff: f64,
    p: f64,
    q: f64,
    h: f64,
    nn: usize,
}

impl NewtonSystem<'_> {
    /// G on interior rows for the full field omega = v - xi (ends included).
    fn residual(&self, om: &[f64], nt: usize) -> Result<Vec<f64>> {
        let nn = self.nn;
        let w = self.op.weights();
        let beta2 = self.op.constants().beta.powi(2);
        let mut rows = vec![0.0; nt * nn];
        let mut lv = vec![0.0; nn];
        for j in 0..nt {
            let o = &om[j * nn..(j + 1) * nn];
            self.op.apply(o, &mut lv);
            for k in 0..nn {
                let x = o[k] / self.xi[k];
                if !(x > -1.0) {
                    return Err(Error::Oracle(format!("Newton iterate not positive at row {j}, node {k}")));
                }
                let f = (self.p * x.ln_1p()).exp_m1() - self.p * x;
                rows[j * nn + k] = w[k] * (beta2 * o[k] - lv[k] + self.coeff * self.xip[k] * f);
            }
        }
        let ih2 = 1.0 / (self.h * self.h);
        let m = nt - 2;
        let mut g = vec![0.0; m * nn];
        for j in 0..m {
            for k in 0..nn {
                let (a, b, c) = (om[j * nn + k], om[(j + 1) * nn + k], om[(j + 2) * nn + k]);
                let avg = (rows[j * nn + k] + 10.0 * rows[(j + 1) * nn + k] + rows[(j + 2) * nn + k]) / 12.0;
                g[j * nn + k] = -w[k] * (a - 2.0 * b + c) * ih2 + avg;
            }
        }
        Ok(g)
    }

    /// Diagonal of the linearized nonlinearity, kappa rho^{-2}((1+x)^q - 1).
    fn linearization(&self, om: &[f64], nt: usize) -> Vec<f64> {
        let nn = self.nn;
        (0..(nt - 2) * nn)
            .map(|i| {
                let k = i % nn;
                let x = om[nn + i] / self.xi[k];
                self.dcoef[k] * (self.q * x.ln_1p()).exp_m1()
            })
            .collect()
    }
}

/// Damped Newton solve of the full nonlinear equation on the grid of
/// `ends`, whose first and last rows supply the Dirichlet data.
pub fn direct_solve_oracle(
    profile: &BoundaryProfile,
    op: &AngularOperator,
    ends: &CylinderField,
) -> Result<(CylinderField, NewtonReport)> {
    let grid = ends.grid().clone();
    if grid.t_max() - grid.t0() < 4.0 - 1e-12 {
        return Err(Error::Parameter("oracle cylinder must have length at least 4".into()));
    }
    if !grid.angular().same_shape(profile.grid()) || !grid.angular().same_shape(op.grid()) {
        return Err(Error::Shape("end data, profile and operator grids differ".into()));
    }
    let nt = grid.nt();
    for j in [0, nt - 1] {
        if ends.row(j).iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Oracle(format!("end data not positive at t = {}", grid.t(j))));
        }
    }
    let c = profile.constants();
    let nn = op.len();
    let xi = profile.xi().to_vec();
    let sys = NewtonSystem {
        op,
        xip: xi.iter().map(|x| x.powf(c.p)).collect(),
        dcoef: profile.rho().iter().map(|r| c.kappa / (r * r)).collect(),
        xi: xi.clone(),
        coeff: c.nonlinear_coeff(),
        p: c.p,
        q: c.q(),
        h: grid.h(),
        nn,
    };
    let dst = DstSolver::new(op, &grid)?;
    let w = op.weights();
    let mut om = vec![0.0; nt * nn];
    for j in [0, nt - 1] {
        for k in 0..nn {
            om[j * nn + k] = ends.row(j)[k] - xi[k];
        }
    }
    let m = nt - 2;
    let norm = |g: &[f64]| g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut g = sys.residual(&om, nt)?;
    let g0 = norm(&g).max(f64::MIN_POSITIVE);
    let mut history = vec![norm(&g)];
    let mut inner_total = 0;
    let jac = |d: &[f64], v: &[f64]| -> Vec<f64> {
        let mut out = dst.apply(v);
        let mut md = vec![0.0; m * nn];
        for i in 0..m * nn {
            md[i] = w[i % nn] * d[i] * v[i];
        }
        for j in 0..m {
            for k in 0..nn {
                let at = |jj: isize| if jj < 0 || jj as usize >= m { 0.0 } else { md[jj as usize * nn + k] };
                let ji = j as isize;
                out[j * nn + k] += (at(ji - 1) + 10.0 * at(ji) + at(ji + 1)) / 12.0;
            }
        }
        out
    };
    for it in 0..NEWTON_MAX {
        if norm(&g) <= NEWTON_TOLERANCE * g0 || norm(&g) == 0.0 {
            let mut values = om;
            for j in 0..nt {
                for k in 0..nn {
                    values[j * nn + k] += xi[k];
                }
            }
            return Ok((
                CylinderField::new(grid, values)?,
                NewtonReport {
                    iterations: it,
                    residual_history: history,
                    inner_iterations: inner_total,
                },
            ));
        }
        let d = sys.linearization(&om, nt);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut delta = dst.solve(&rhs)?;
        let rn = norm(&rhs);
        let mut converged = false;
        let mut last = f64::INFINITY;
        for _ in 0..INNER_MAX {
            inner_total += 1;
            let jd = jac(&d, &delta);
            let r: Vec<f64> = rhs.iter().zip(&jd).map(|(a, b)| a - b).collect();
            let rr = norm(&r);
            // Stop at the tolerance or once rounding stalls the iteration.
            if rr <= INNER_TOLERANCE * rn || (rr >= 0.5 * last && rr <= 1e3 * INNER_TOLERANCE * rn) {
                converged = true;
                break;
            }
            last = rr;
            let z = dst.solve(&r)?;
            delta.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        }
        if !converged {
            return Err(Error::Oracle("inner linear iteration of the Newton oracle stalled".into()));
        }
        let mut step = 1.0;
        loop {
            let mut trial = om.clone();
            for i in 0..m * nn {
                trial[nn + i] += step * delta[i];
            }
            match sys.residual(&trial, nt) {
                Ok(gt) if norm(&gt) < norm(&g) || norm(&gt) <= NEWTON_TOLERANCE * g0 => {
                    om = trial;
                    g = gt;
                    break;
                }
                _ if step > 1.0 / 64.0 => step *= 0.5,
                _ => return Err(Error::Oracle(format!("Newton line search failed at iteration {it}"))),
            }
        }
        history.push(norm(&g));
    }
    Err(Error::Oracle(format!(
        "Newton did not converge in {NEWTON_MAX} iterations (residual {:.3e})",
        norm(&g)
    )))
}

/// Cone values u(r, phi) = r^{-beta} v(-ln r, phi) read off a cylinder field.
#[derive(Clone, Debug)]
pub struct ConeSampler {
    v: CylinderField,
    beta: f64,
}

fn lagrange4(xs: &[f64], x: f64) -> [f64; 4] {
    let mut l = [1.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                l[i] *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
    }
    l
}

fn stencil_start(len: usize, i: usize) -> usize {
    i.saturating_sub(1).min(len - 4)
}

pub fn reconstruct_cone_solution(v: &CylinderField, profile: &BoundaryProfile) -> Result<ConeSampler> {
    if !v.grid().angular().same_shape(profile.grid()) {
        return Err(Error::Shape("field and profile grids differ".into()));
    }
    if v.values().iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("cylinder field is not positive".into()));
    }
    Ok(ConeSampler {
        v: v.clone(),
        beta: profile.beta(),
    })
}

impl ConeSampler {
    /// u at radius r in [e^{-T}, e^{-t0}] and angle phi up to the last node.
    pub fn u(&self, r: f64, phi: f64) -> Result<f64> {
        let g = self.v.grid();
        let t = -r.ln();
        if !(r > 0.0) || t < g.t0() - 1e-12 || t > g.t_max() + 1e-12 {
            return Err(Error::Range(format!(
                "r = {r} outside [{:.6e}, {:.6e}]",
                (-g.t_max()).exp(),
                (-g.t0()).exp()
            )));
        }
        let ag = g.angular();
        let x = ag.nodes();
        let last = *x.last().unwrap();
        if !(0.0..=last).contains(&phi) {
            return Err(Error::Range(format!("phi = {phi} outside [0, {last}]")));
        }
        let jt = ((t - g.t0()) / g.h()).floor().max(0.0) as usize;
        let j0 = stencil_start(g.nt(), jt.min(g.nt() - 1));
        let tn: Vec<f64> = (j0..j0 + 4).map(|j| g.t(j)).collect();
        let lt = lagrange4(&tn, t);
        let kp = x.partition_point(|&y| y <= phi).saturating_sub(1);
        let k0 = stencil_start(x.len(), kp);
        // Interpolate in phi on the even extension across the axis.
        let (xs, ks): (Vec<f64>, Vec<usize>) = if phi < x[0] {
            (vec![-x[1], -x[0], x[0], x[1]], vec![1, 0, 0, 1])
        } else {
            ((k0..k0 + 4).map(|k| x[k]).collect(), (k0..k0 + 4).collect())
        };
        let lp = lagrange4(&xs, phi);
        let mut val = 0.0;
        for (a, j) in lt.iter().zip(j0..j0 + 4) {
            let row = self.v.row(j);
            let vr: f64 = lp.iter().zip(&ks).map(|(b, &k)| b * row[k]).sum();
            val += a * vr;
        }
        Ok(r.powf(-self.beta) * val)
    }

    /// CSV `r,phi,u` on `count` log-spaced radii over the whole t range.
    pub fn samples_csv(&self, count: usize, phis: &[f64]) -> Result<String> {
        use std::fmt::Write as _;
        let g = self.v.grid();
        let mut s = String::from("r,phi,u\n");
        for i in 0..count.max(2) {
            let t = g.t0() + (g.t_max() - g.t0()) * i as f64 / (count.max(2) - 1) as f64;
            let r = (-t).exp();
            for &p in phis {
                let _ = writeln!(s, "{r:e},{p:e},{:e}", self.u(r, p)?);
            }
        }
        Ok(s)
    }
}
