use crate::error::{Error, Result};
use serde::Serialize;

/// Dimension-dependent constants of the cone problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub n: usize,
    /// (n-2)/2, the blow-up exponent of the radial profile.
    pub beta: f64,
    /// (n-2)/2, the zeroth-order coefficient of the rho-equation.
    pub s_const: f64,
    /// n(n+2)/4, the coefficient of the singular potential.
    pub kappa: f64,
    /// (n+2)/2, the boundary indicial root, s(s-1) = kappa.
    pub s: f64,
    /// (n+2)/(n-2), the critical exponent.
    pub p: f64,
}

impl Constants {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Parameter(format!("dimension n = {n} must be at least 3")));
        }
        let nf = n as f64;
        Ok(Constants {
            n,
            beta: (nf - 2.0) / 2.0,
            s_const: (nf - 2.0) / 2.0,
            kappa: nf * (nf + 2.0) / 4.0,
            s: (nf + 2.0) / 2.0,
            p: (nf + 2.0) / (nf - 2.0),
        })
    }

    /// Coefficient n(n-2)/4 of the power nonlinearity.
    pub fn nonlinear_coeff(&self) -> f64 {
        let nf = self.n as f64;
        nf * (nf - 2.0) / 4.0
    }

    /// 4/(n-2) = p - 1.
    pub fn q(&self) -> f64 {
        4.0 / (self.n as f64 - 2.0)
    }
}
