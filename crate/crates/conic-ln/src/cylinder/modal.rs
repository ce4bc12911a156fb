//! Inversion of the cylinder operator in the eigenbasis of the discrete
//! angular operator. Each angular mode reduces to a scalar Numerov problem in
//! t: the low modes (gamma_i < mu) use the decaying half-line kernel, the
//! complement uses homogeneous Dirichlet data at t0 and T.

use super::{apply_cyl_operator, weighted_norm_window, CylinderField, CylinderGrid, WeightedNormSpec};
use crate::error::{Error, Result};
use crate::grid::AngularGrid;
use crate::index_set::IndexChain;
use crate::operator::AngularOperator;
use crate::spectrum::Spectrum;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use std::sync::Arc;

/// Relative size of a low-mode component of f tolerated by the complement solver.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;
/// Slack allowed between the fitted decay rate of f and the weight rate mu.
pub const RATE_SLACK: f64 = 0.05;

/// Complete M-orthonormal eigenbasis of the (possibly snapped) angular operator.
#[derive(Clone, Debug)]
pub struct ModalBasis {
    grid: Arc<AngularGrid>,
    beta: f64,
    lambdas: Vec<f64>,
    gammas: Vec<f64>,
    phi: DMatrix<f64>,
    analysis: DMatrix<f64>,
}

impl ModalBasis {
    pub fn new(op: &AngularOperator) -> Result<Self> {
        let nn = op.len();
        let w = op.weights();
        let (kd, ko) = op.stiffness();
        let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
        let mut s = DMatrix::<f64>::zeros(nn, nn);
        for k in 0..nn {
            s[(k, k)] = kd[k] / w[k];
            if k + 1 < nn {
                let e = ko[k] / (sq[k] * sq[k + 1]);
                s[(k, k + 1)] = e;
                s[(k + 1, k)] = e;
            }
        }
        for snap in op.snaps() {
            let u: Vec<f64> = snap.mode.iter().zip(&sq).map(|(p, r)| p * r).collect();
            for i in 0..nn {
                for j in 0..nn {
                    s[(i, j)] += snap.delta * u[i] * u[j];
                }
            }
        }
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..nn).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let beta = op.constants().beta;
        let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        if lambdas.iter().any(|&l| !(l + beta * beta > 0.0)) {
            return Err(Error::Resolution(format!(
                "discrete operator is indefinite (lowest eigenvalue {:.6e}); refine the angular mesh",
                lambdas[0]
            )));
        }
        let gammas = lambdas.iter().map(|l| (l + beta * beta).sqrt()).collect();
        let mut phi = DMatrix::<f64>::zeros(nn, nn);
        for (c, &i) in order.iter().enumerate() {
            for k in 0..nn {
                phi[(k, c)] = eig.eigenvectors[(k, i)] / sq[k];
            }
        }
        let mut analysis = phi.transpose();
        for k in 0..nn {
            analysis.column_mut(k).scale_mut(w[k]);
        }
        Ok(ModalBasis {
            grid: op.grid().clone(),
            beta,
            lambdas,
            gammas,
            phi,
            analysis,
        })
    }

    pub fn grid(&self) -> &Arc<AngularGrid> {
        &self.grid
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }
    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
    pub fn mode(&self, i: usize) -> Vec<f64> {
        self.phi.column(i).iter().copied().collect()
    }

    /// Modal coefficients, one column per t row: C = Phi^T M F.
    pub fn analyze(&self, f: &CylinderField) -> DMatrix<f64> {
        let g = f.grid();
        let fm = DMatrix::from_column_slice(g.nphi(), g.nt(), f.values());
        &self.analysis * fm
    }

    pub fn synthesize(&self, grid: &Arc<CylinderGrid>, coeffs: &DMatrix<f64>) -> CylinderField {
        let v = &self.phi * coeffs;
        CylinderField {
            grid: grid.clone(),
            values: v.as_slice().to_vec(),
        }
    }
}

struct Numerov {
    a: f64,
    b: f64,
    h2: f64,
}

impl Numerov {
    fn new(gamma: f64, h: f64) -> Self {
        let g2h2 = gamma * gamma * h * h;
        Numerov {
            a: 1.0 - g2h2 / 12.0,
            b: 2.0 + 10.0 * g2h2 / 12.0,
            h2: h * h,
        }
    }

    fn rhs(&self, f: &[f64], j: usize) -> f64 {
        self.h2 * (f[j - 1] + 10.0 * f[j] + f[j + 1]) / 12.0
    }

    /// Decaying solution on the half line; beyond the last node f continues
    /// as f_M q^{k-M}.
    fn half_line(&self, f: &[f64], q: f64) -> Result<Vec<f64>> {
        let m = f.len() - 1;
        let r = (self.b - (self.b * self.b - 4.0 * self.a * self.a).sqrt()) / (2.0 * self.a);
        if !(q < r) {
            return Err(Error::Rate {
                fitted: -q.ln(),
                required: -r.ln(),
            });
        }
        let fm = f[m];
        let c_tail = self.h2 * fm * (1.0 + 10.0 * q + q * q) / (12.0 * self.a);
        let c_at = |k: usize| -> f64 {
            if k < m {
                self.rhs(f, k) / self.a
            } else {
                self.h2 * (f[m - 1] + 10.0 * fm + q * fm) / (12.0 * self.a)
            }
        };
        let rinv = 1.0 / r;
        let denom = rinv - r;
        let mut a_acc = c_tail / (r - q);
        let mut b_acc = c_tail * r / (1.0 - q * r);
        let mut v = vec![0.0; m + 1];
        v[m] = (a_acc - b_acc) / denom;
        for j in (0..m).rev() {
            let c = c_at(j + 1);
            a_acc = rinv * (c + a_acc);
            b_acc = r * (c + b_acc);
            v[j] = (a_acc - b_acc) / denom;
        }
        Ok(v)
    }

    /// Solution with v_0 = v_M = 0.
    fn dirichlet(&self, f: &[f64]) -> Vec<f64> {
        let m = f.len() - 1;
        let mut v = vec![0.0; m + 1];
        if m < 2 {
            return v;
        }
        // Thomas sweep for a v_{j-1} - b v_j + a v_{j+1} = rhs_j, j = 1..m-1.
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        for j in 1..m {
            let (pc, pd) = if j > 1 { (cp[j - 1], dp[j - 1]) } else { (0.0, 0.0) };
            let den = -self.b - self.a * pc;
            cp[j] = self.a / den;
            dp[j] = (self.rhs(f, j) - self.a * pd) / den;
        }
        v[m - 1] = dp[m - 1];
        for j in (1..m - 1).rev() {
            v[j] = dp[j] - cp[j] * v[j + 1];
        }
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplementReport {
    pub mu: f64,
    pub low_modes: usize,
    pub t_max: f64,
    /// Largest relative low-mode component of the solution over all t.
    pub orthogonality_defect: f64,
    pub residual_relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualNorms {
    /// Weighted (mu, s - 2, 0) norm of Lv - f over the trusted window.
    pub weighted: f64,
    /// The same divided by the weighted norm of f.
    pub relative: f64,
    /// Relative residual of the explicit fourth-order operator, which measures
    /// consistency rather than solver accuracy.
    pub stencil_relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvertReport {
    pub mu: f64,
    #[serde(rename = "I")]
    pub low_modes: usize,
    #[serde(rename = "T")]
    pub t_max: f64,
    pub trusted_until: f64,
    pub fitted_rate: Option<f64>,
    pub residual_norms: ResidualNorms,
    #[serde(rename = "norm_bound_C")]
    pub norm_bound: f64,
}

/// Inverse of the cylinder operator built on a fixed spectrum.
#[derive(Clone, Debug)]
pub struct CylinderSolver {
    spectrum: Spectrum,
    basis: ModalBasis,
}

/// Last row index of the trusted window [t0, t0 + (T - t0)/2].
pub fn trusted_rows(grid: &CylinderGrid) -> usize {
    (grid.nt() - 1) / 2 + 1
}

impl CylinderSolver {
    pub fn new(spectrum: &Spectrum) -> Result<Self> {
        let basis = ModalBasis::new(spectrum.operator())?;
        Ok(CylinderSolver {
            spectrum: spectrum.clone(),
            basis,
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }

    /// Number of discrete modes with gamma_i < mu.
    pub fn low_count(&self, mu: f64) -> usize {
        self.basis.gammas.iter().take_while(|&&g| g < mu).count()
    }

    fn check_field(&self, f: &CylinderField) -> Result<()> {
        if !f.grid().angular().same_shape(self.basis.grid()) {
            return Err(Error::Shape("field and spectrum live on different angular grids".into()));
        }
        Ok(())
    }

    fn check_mu(&self, mu: f64) -> Result<()> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Parameter(format!("weight rate {mu} must be positive")));
        }
        if let Some(g) = self.basis.gammas.iter().find(|&&g| (g - mu).abs() <= 1e-12 * mu) {
            return Err(Error::Precondition(format!("mu = {mu} coincides with the exponent {g}")));
        }
        Ok(())
    }

    fn solve_modes(&self, f: &CylinderField, mu: f64, coeffs: &DMatrix<f64>, low: usize) -> Result<CylinderField> {
        let grid = f.grid();
        let h = grid.h();
        let nt = grid.nt();
        let q = (-mu * h).exp();
        let ct = coeffs.transpose();
        let mut out = DMatrix::<f64>::zeros(self.basis.len(), nt);
        for i in 0..self.basis.len() {
            let fi = ct.column(i);
            if fi.iter().all(|&x| x == 0.0) {
                continue;
            }
            let fi: Vec<f64> = fi.iter().copied().collect();
            let num = Numerov::new(self.basis.gammas[i], h);
            let vi = if i < low {
                num.half_line(&fi, q).map_err(|e| match e {
                    Error::Rate { .. } => Error::Rate {
                        fitted: mu,
                        required: self.basis.gammas[i],
                    },
                    other => other,
                })?
            } else {
                num.dirichlet(&fi)
            };
            for (j, v) in vi.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(self.basis.synthesize(grid, &out))
    }

    /// Residual of the three-point compact scheme actually solved, and of the
    /// explicit operator.
    fn residual(&self, v: &CylinderField, f: &CylinderField, mu: f64) -> Result<ResidualNorms> {
        let op = self.spectrum.operator();
        let grid = v.grid();
        let (nt, np, h) = (grid.nt(), grid.nphi(), grid.h());
        let beta2 = op.constants().beta.powi(2);
        let mut u = vec![0.0; nt * np];
        let mut lv = vec![0.0; np];
        for j in 0..nt {
            op.apply(v.row(j), &mut lv);
            for k in 0..np {
                u[j * np + k] = f.row(j)[k] + beta2 * v.row(j)[k] - lv[k];
            }
        }
        let x = v.values();
        let mut r = vec![0.0; nt * np];
        for j in 1..nt - 1 {
            for k in 0..np {
                let (a, b, c) = ((j - 1) * np + k, j * np + k, (j + 1) * np + k);
                r[b] = (x[a] - 2.0 * x[b] + x[c]) / (h * h) - (u[a] + 10.0 * u[b] + u[c]) / 12.0;
            }
        }
        let r = CylinderField { grid: grid.clone(), values: r };
        let stencil = apply_cyl_operator(op, v)?.add_scaled(-1.0, f)?;
        let s = op.constants().s;
        let spec = WeightedNormSpec::new(mu, s - 2.0, 0)?;
        let rho = op.rho();
        let end = trusted_rows(grid);
        let fnorm = weighted_norm_window(f, &spec, rho, 2, end);
        let rel = |x: f64| if fnorm > 0.0 { x / fnorm } else { x };
        let weighted = weighted_norm_window(&r, &spec, rho, 1, end);
        Ok(ResidualNorms {
            weighted,
            relative: rel(weighted),
            stencil_relative: rel(weighted_norm_window(&stencil, &spec, rho, 2, end)),
        })
    }

    /// Solve Lv = f with v = 0 at both ends, for f orthogonal to every mode
    /// with gamma_i < mu at every t.
    pub fn solve_complement(&self, f: &CylinderField, mu: f64) -> Result<(CylinderField, ComplementReport)> {
        self.check_field(f)?;
        self.check_mu(mu)?;
        let low = self.low_count(mu);
        let mut coeffs = self.basis.analyze(f);
        let nt = f.grid().nt();
        for j in 0..nt {
            let size = coeffs.column(j).norm();
            for i in 0..low {
                let c = coeffs[(i, j)];
                if c.abs() > ORTHOGONALITY_TOLERANCE * size {
                    return Err(Error::Precondition(format!(
                        "right-hand side has component {c:.3e} on mode {} at t = {}; project it out first",
                        i + 1,
                        f.grid().t(j)
                    )));
                }
                coeffs[(i, j)] = 0.0;
            }
        }
        let v = self.solve_modes(f, mu, &coeffs, low)?;
        let vc = self.basis.analyze(&v);
        let mut defect = 0.0f64;
        for j in 0..nt {
            let size = vc.column(j).norm();
            if size > 0.0 {
                for i in 0..low {
                    defect = defect.max(vc[(i, j)].abs() / size);
                }
            }
        }
        let res = self.residual(&v, f, mu)?;
        Ok((
            v,
            ComplementReport {
                mu,
                low_modes: low,
                t_max: f.grid().t_max(),
                orthogonality_defect: defect,
                residual_relative: res.relative,
            },
        ))
    }

    /// Decay rate of sup rho^{2-s}|f| fitted over the second half of the grid.
    pub fn fitted_rate(&self, f: &CylinderField) -> Option<f64> {
        let s = self.spectrum.operator().constants().s;
        let nt = f.grid().nt();
        super::sup_decay_rate(f, self.spectrum.operator().rho(), s - 2.0, nt / 2, nt, 1e-300).map(|(r, _)| r)
    }

    /// v = L^{-1} f: low modes through the decaying kernel, the remainder
    /// through the complement problem with zero end data.
    pub fn invert(&self, chain: &IndexChain, f: &CylinderField, mu: f64) -> Result<(CylinderField, InvertReport)> {
        self.check_field(f)?;
        self.check_mu(mu)?;
        let gamma1 = self.basis.gammas[0];
        if !(mu > gamma1) {
            return Err(Error::Precondition(format!("mu = {mu} must exceed gamma_1 = {gamma1}")));
        }
        let m = chain.membership(mu)?;
        if m.in_set {
            return Err(Error::Precondition(format!(
                "mu = {mu} lies in the index set (nearest value {})",
                m.nearest
            )));
        }
        let grid = f.grid().clone();
        let low = self.low_count(mu);
        let trusted_until = grid.t(trusted_rows(&grid) - 1);
        let zero = f.values().iter().all(|&x| x == 0.0);
        let fitted_rate = if zero { None } else { self.fitted_rate(f) };
        if let Some(rate) = fitted_rate {
            if rate < mu - RATE_SLACK {
                return Err(Error::Rate { fitted: rate, required: mu });
            }
        }
        if zero {
            let report = InvertReport {
                mu,
                low_modes: low,
                t_max: grid.t_max(),
                trusted_until,
                fitted_rate,
                residual_norms: ResidualNorms {
                    weighted: 0.0,
                    relative: 0.0,
                    stencil_relative: 0.0,
                },
                norm_bound: 0.0,
            };
            return Ok((CylinderField::zeros(grid), report));
        }
        let coeffs = self.basis.analyze(f);
        let v = self.solve_modes(f, mu, &coeffs, low)?;
        let residual_norms = self.residual(&v, f, mu)?;
        let s = self.spectrum.operator().constants().s;
        let rho = self.spectrum.operator().rho();
        let end = trusted_rows(&grid);
        let vn = weighted_norm_window(&v, &WeightedNormSpec::new(mu, s, 2)?, rho, 0, end);
        let fnorm = weighted_norm_window(f, &WeightedNormSpec::new(mu, s - 2.0, 0)?, rho, 0, end);
        let report = InvertReport {
            mu,
            low_modes: low,
            t_max: grid.t_max(),
            trusted_until,
            fitted_rate,
            residual_norms,
            norm_bound: if fnorm > 0.0 { vn / fnorm } else { 0.0 },
        };
        Ok((v, report))
    }
}

/// One-shot complement solve; see [`CylinderSolver::solve_complement`].
pub fn solve_complement(spectrum: &Spectrum, f: &CylinderField, mu: f64) -> Result<(CylinderField, ComplementReport)> {
    CylinderSolver::new(spectrum)?.solve_complement(f, mu)
}

/// One-shot inverse; see [`CylinderSolver::invert`].
pub fn invert_cyl_operator(
    spectrum: &Spectrum,
    chain: &IndexChain,
    f: &CylinderField,
    mu: f64,
) -> Result<(CylinderField, InvertReport)> {
    CylinderSolver::new(spectrum)?.invert(chain, f, mu)
}
