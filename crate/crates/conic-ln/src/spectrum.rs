//! Eigenpairs of the singular operator L on the cap and the indicial
//! exponents gamma_i = sqrt(lambda_i + beta^2).

use crate::error::{Error, Result};
use crate::grid::{AngularField, AngularGrid};
use crate::linalg::{linear_fit, lowest_eigenvalues, solve_tridiag};
use crate::operator::{AngularOperator, Snap};
use crate::profile::BoundaryProfile;
use serde::Serialize;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct Spectrum {
    op: AngularOperator,
    lambdas: Vec<f64>,
    discrete_lambdas: Vec<f64>,
    gammas: Vec<f64>,
    modes: Vec<Vec<f64>>,
    multiple: Vec<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub kappa: f64,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub discrete_lambdas: Vec<f64>,
    pub snapped: Vec<usize>,
}

/// Relative gap below which neighbouring eigenvalues are reported as multiple.
pub const MULTIPLICITY_GAP: f64 = 1e-8;

pub fn compute_spectrum(profile: &BoundaryProfile, count: usize) -> Result<Spectrum> {
    let op = AngularOperator::from_profile(profile);
    let nn = op.len();
    if count == 0 {
        return Err(Error::Parameter("eigen count must be at least 1".into()));
    }
    if count > nn / 4 {
        return Err(Error::Resolution(format!(
            "{count} eigenpairs requested on {nn} nodes; at most {} are resolved",
            nn / 4
        )));
    }
    let w = op.weights().to_vec();
    let (kd, ko) = op.stiffness();
    let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let d: Vec<f64> = (0..nn).map(|k| kd[k] / w[k]).collect();
    let e: Vec<f64> = (0..nn - 1).map(|k| ko[k] / (sq[k] * sq[k + 1])).collect();
    let approx = lowest_eigenvalues(&d, &e, count);
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut lambdas = Vec::with_capacity(count);
    for (i, &lam) in approx.iter().enumerate() {
        let shift = lam * (1.0 + 1e-13) + 1e-300;
        let diag: Vec<f64> = d.iter().map(|v| v - shift).collect();
        let mut y: Vec<f64> = (0..nn)
            .map(|k| 1.0 + 0.5 * ((k as f64 + 1.0) * 0.7 * (i as f64 + 1.0)).sin())
            .collect();
        for _ in 0..3 {
            y = solve_tridiag(&e, &diag, &e, &y)?;
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Numeric(format!("inverse iteration failed for mode {}", i + 1)));
            }
            y.iter_mut().for_each(|v| *v /= norm);
        }
        let mut u: Vec<f64> = y.iter().zip(&sq).map(|(y, s)| y / s).collect();
        for _ in 0..2 {
            for prev in &modes {
                let c = op.dot(prev, &u);
                u.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
            }
            let norm = op.dot(&u, &u).sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
        }
        if let Some(k) = u.iter().position(|v| v.abs() > 1e-6) {
            if u[k] < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let rq = op.energy(&u) / op.dot(&u, &u);
        lambdas.push(rq);
        modes.push(u);
    }
    if !(lambdas[0] > 0.0) {
        return Err(Error::Numeric(format!("first eigenvalue {} is not positive", lambdas[0])));
    }
    let beta = profile.beta();
    let gammas = lambdas.iter().map(|l| (l + beta * beta).sqrt()).collect();
    let multiple = (0..count)
        .map(|i| {
            let near = |j: usize| (lambdas[i] - lambdas[j]).abs() <= MULTIPLICITY_GAP * lambdas[i].abs();
            (i > 0 && near(i - 1)) || (i + 1 < count && near(i + 1))
        })
        .collect();
    Ok(Spectrum {
        op,
        discrete_lambdas: lambdas.clone(),
        lambdas,
        gammas,
        modes,
        multiple,
    })
}

impl Spectrum {
    pub fn operator(&self) -> &AngularOperator {
        &self.op
    }
    pub fn grid(&self) -> &Arc<AngularGrid> {
        self.op.grid()
    }
    pub fn kappa(&self) -> f64 {
        self.op.constants().kappa
    }
    pub fn beta(&self) -> f64 {
        self.op.constants().beta
    }
    pub fn count(&self) -> usize {
        self.lambdas.len()
    }
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
    pub fn discrete_lambdas(&self) -> &[f64] {
        &self.discrete_lambdas
    }
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
    /// Eigenvector i (zero-based), orthonormal in the weighted pairing.
    pub fn mode(&self, i: usize) -> &[f64] {
        &self.modes[i]
    }
    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }
    pub fn eigenfield(&self, i: usize) -> AngularField {
        AngularField::new(self.grid().clone(), self.modes[i].clone()).expect("shape")
    }
    pub fn is_multiple(&self, i: usize) -> bool {
        self.multiple[i]
    }

    /// Move selected exponents onto prescribed values, modifying the operator by
    /// the matching rank-one terms so that every eigenpair stays exact.
    pub fn with_snapped_gammas(&self, targets: &[(usize, f64)]) -> Spectrum {
        let beta = self.beta();
        let mut out = self.clone();
        let mut snaps = Vec::new();
        for &(i, g) in targets {
            let lam = g * g - beta * beta;
            snaps.push(Snap {
                index: i,
                mode: self.modes[i].clone(),
                delta: lam - self.discrete_lambdas[i],
            });
            out.lambdas[i] = lam;
            out.gammas[i] = g;
        }
        out.op = self.op.with_snaps(snaps);
        out
    }

    /// Coefficients <f, phi_i> for the first `upto` modes.
    pub fn project(&self, f: &AngularField, upto: usize) -> Result<Vec<f64>> {
        if !f.grid().same_shape(self.grid()) {
            return Err(Error::Shape("field and spectrum grids differ".into()));
        }
        if upto > self.count() {
            return Err(Error::Parameter(format!("upto = {upto} exceeds {} modes", self.count())));
        }
        Ok(self.project_slice(f.values(), upto))
    }

    pub(crate) fn project_slice(&self, f: &[f64], upto: usize) -> Vec<f64> {
        self.modes[..upto].iter().map(|m| self.op.dot(m, f)).collect()
    }

    /// Log-log slope of |phi_i| against rho over the resolved boundary decade.
    pub fn eigen_decay_slope(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.count() {
            return Err(Error::Parameter(format!("mode index {i} outside 1..={}", self.count())));
        }
        decay_slope_against_rho(self.op.rho(), &self.modes[i - 1])
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            kappa: self.kappa(),
            lambdas: self.lambdas.clone(),
            gammas: self.gammas.clone(),
            discrete_lambdas: self.discrete_lambdas.clone(),
            snapped: self.op.snaps().iter().map(|s| s.index + 1).collect(),
        }
    }

    /// Eigenfields as a CSV matrix, one column per mode.
    pub fn modes_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("phi");
        for i in 0..self.count() {
            let _ = write!(s, ",phi_{}", i + 1);
        }
        s.push('\n');
        for k in 0..self.op.len() {
            let _ = write!(s, "{:e}", self.grid().nodes()[k]);
            for m in &self.modes {
                let _ = write!(s, ",{:e}", m[k]);
            }
            s.push('\n');
        }
        s
    }
}

/// Slope of log|f| against log rho over the resolved boundary decade.
pub fn decay_slope_against_rho(rho: &[f64], f: &[f64]) -> Result<f64> {
    let idx: Vec<usize> = crate::profile::boundary_decade(rho)
        .into_iter()
        .filter(|&k| f[k] != 0.0)
        .collect();
    if idx.len() < 3 {
        return Err(Error::Diagnostic("degenerate boundary fit window".into()));
    }
    let x: Vec<f64> = idx.iter().map(|&k| rho[k].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&k| f[k].abs().ln()).collect();
    Ok(linear_fit(&x, &y).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{solve_profile, ProfileOptions};
    use std::f64::consts::FRAC_PI_2;

    fn hemisphere(n: usize, nodes: usize, count: usize) -> Spectrum {
        let g = AngularGrid::build(n, FRAC_PI_2, nodes, 2.0).unwrap();
        let p = solve_profile(&g, &ProfileOptions::default()).unwrap();
        compute_spectrum(&p, count).unwrap()
    }

    #[test]
    fn hemisphere_first_exponent_is_dimension() {
        for n in [3usize, 4] {
            let sp = hemisphere(n, 800, 3);
            assert!((sp.gammas()[0] - n as f64).abs() < 1e-3, "n={n}: {}", sp.gammas()[0]);
            let s = (n as f64 + 2.0) / 2.0;
            assert!((sp.eigen_decay_slope(1).unwrap() - s).abs() < 0.05);
        }
    }

    #[test]
    fn richardson_limit_of_first_eigenvalue() {
        let l: Vec<f64> = [200, 400, 800].iter().map(|&m| hemisphere(3, m, 1).lambdas()[0]).collect();
        let order = ((l[0] - l[1]) / (l[1] - l[2])).log2();
        assert!(order > 1.5, "order {order}");
        let extrap = l[2] + (l[2] - l[1]) / (2f64.powf(order) - 1.0);
        assert!((extrap - 35.0 / 4.0).abs() < 1e-5, "{extrap}");
    }

    #[test]
    fn modes_are_orthonormal_and_rayleigh_consistent() {
        let sp = hemisphere(5, 400, 5);
        for i in 0..5 {
            for j in 0..5 {
                let ip = sp.operator().dot(sp.mode(i), sp.mode(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-10);
            }
            let rq = sp.operator().energy(sp.mode(i));
            assert!((rq - sp.lambdas()[i]).abs() < 1e-6 * sp.lambdas()[i]);
            let b = sp.beta();
            let back = sp.gammas()[i] * sp.gammas()[i] - b * b;
            assert!((back - sp.lambdas()[i]).abs() <= 1e-14 * sp.lambdas()[i]);
        }
        assert!(sp.lambdas().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn projection_recovers_combinations() {
        let sp = hemisphere(3, 400, 4);
        let f: Vec<f64> = (0..sp.operator().len())
            .map(|k| 3.0 * sp.mode(0)[k] - 2.0 * sp.mode(2)[k])
            .collect();
        let c = sp.project(&AngularField::new(sp.grid().clone(), f).unwrap(), 4).unwrap();
        for (got, want) in c.iter().zip([3.0, 0.0, -2.0, 0.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!(sp.project(&sp.eigenfield(0), 5).is_err());
    }

    #[test]
    fn constant_field_has_zero_decay_slope() {
        let sp = hemisphere(3, 200, 1);
        let one = vec![1.0; sp.operator().len()];
        assert!(decay_slope_against_rho(sp.operator().rho(), &one).unwrap().abs() < 1e-12);
    }

    #[test]
    fn snapping_moves_one_exponent_and_keeps_modes() {
        let sp = hemisphere(4, 400, 3);
        let sn = sp.with_snapped_gammas(&[(2, 8.0)]);
        assert_eq!(sn.gammas()[2], 8.0);
        let mut out = vec![0.0; sn.operator().len()];
        for i in 0..3 {
            sn.operator().apply(sn.mode(i), &mut out);
            let err = out
                .iter()
                .zip(sn.mode(i))
                .map(|(a, m)| (a + sn.lambdas()[i] * m).abs())
                .fold(0.0f64, f64::max);
            let scale = sn.mode(i).iter().fold(0.0f64, |a, m| a.max(m.abs())) * sn.lambdas()[i];
            assert!(err < 1e-6 * scale, "mode {i}: {err}");
        }
    }

    #[test]
    fn resolution_guard() {
        let g = AngularGrid::build(3, FRAC_PI_2, 40, 2.0).unwrap();
        let p = solve_profile(&g, &ProfileOptions::default()).unwrap();
        assert!(matches!(compute_spectrum(&p, 11), Err(Error::Resolution(_))));
    }
}
