//! Independent solver for the complement problem: the quadratic energy of the
//! Dirichlet cylinder problem minimized by projected conjugate gradients,
//! preconditioned with a sine transform in t.

use super::{CylinderField, CylinderGrid};
use crate::error::{Error, Result};
use crate::operator::AngularOperator;
use crate::spectrum::Spectrum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use std::sync::Arc;

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOLERANCE: f64 = 1e-13;

/// Exact inverse of the energy operator
/// H = -M d_tt + A_t (K' + beta^2 M) on interior t nodes, where d_tt is the
/// second difference and A_t the (1, 10, 1)/12 average.
pub struct DstSolver {
    op: AngularOperator,
    m: usize,
    h: f64,
    sigma: Vec<f64>,
    zeta: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl DstSolver {
    pub fn new(op: &AngularOperator, grid: &CylinderGrid) -> Result<Self> {
        if !grid.angular().same_shape(op.grid()) {
            return Err(Error::Shape("cylinder grid and operator differ".into()));
        }
        let m = grid.nt() - 2;
        let h = grid.h();
        let sigma: Vec<f64> = (1..=m)
            .map(|l| {
                let s = (std::f64::consts::PI * l as f64 / (2.0 * (m + 1) as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        let zeta = sigma.iter().map(|s| 1.0 - h * h * s / 12.0).collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * (m + 1));
        Ok(DstSolver {
            op: op.clone(),
            m,
            h,
            sigma,
            zeta,
            fft,
        })
    }

    pub fn interior_rows(&self) -> usize {
        self.m
    }

    /// In-place DST-I along t of every angular column of an m x N row-major block.
    fn transform(&self, x: &mut [f64]) {
        let (m, nn) = (self.m, self.op.len());
        let len = 2 * (m + 1);
        let mut buf = vec![Complex::new(0.0, 0.0); len];
        for k in 0..nn {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for j in 0..m {
                let v = x[j * nn + k];
                buf[j + 1].re = v;
                buf[len - 1 - j].re = -v;
            }
            self.fft.process(&mut buf);
            for l in 0..m {
                x[l * nn + k] = -0.5 * buf[l + 1].im;
            }
        }
    }

    /// z with H z = y, both m x N row-major blocks in the dual representation.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        let (m, nn) = (self.m, self.op.len());
        let beta2 = self.op.constants().beta.powi(2);
        let mut x = y.to_vec();
        self.transform(&mut x);
        let mut work = Vec::new();
        for l in 0..m {
            let z = self.zeta[l];
            let rhs: Vec<f64> = x[l * nn..(l + 1) * nn].iter().map(|v| v / z).collect();
            let sol = self.op.solve_dual(beta2 + self.sigma[l] / z, &rhs, &mut work)?;
            x[l * nn..(l + 1) * nn].copy_from_slice(&sol);
        }
        self.transform(&mut x);
        let scale = 2.0 / (m + 1) as f64;
        x.iter_mut().for_each(|v| *v *= scale);
        Ok(x)
    }

    /// H v for an interior block v.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (m, nn) = (self.m, self.op.len());
        let beta2 = self.op.constants().beta.powi(2);
        let w = self.op.weights();
        // Rows of (K' + beta^2 M) v, i.e. M (beta^2 - L') v.
        let mut kv = vec![0.0; m * nn];
        let mut lv = vec![0.0; nn];
        for j in 0..m {
            let row = &v[j * nn..(j + 1) * nn];
            self.op.apply(row, &mut lv);
            for k in 0..nn {
                kv[j * nn + k] = w[k] * (beta2 * row[k] - lv[k]);
            }
        }
        let ih2 = 1.0 / (self.h * self.h);
        let at = |a: &[f64], j: isize, k: usize| -> f64 {
            if j < 0 || j as usize >= m {
                0.0
            } else {
                a[j as usize * nn + k]
            }
        };
        let mut out = vec![0.0; m * nn];
        for j in 0..m {
            let ji = j as isize;
            for k in 0..nn {
                let d2 = at(v, ji - 1, k) - 2.0 * v[j * nn + k] + at(v, ji + 1, k);
                let avg = (at(&kv, ji - 1, k) + 10.0 * kv[j * nn + k] + at(&kv, ji + 1, k)) / 12.0;
                out[j * nn + k] = -w[k] * d2 * ih2 + avg;
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizerReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub energy: f64,
    pub random_start: bool,
}

struct Projector<'a> {
    modes: Vec<&'a [f64]>,
    w: &'a [f64],
}

impl Projector<'_> {
    /// P v = v - sum phi <phi, v>_M, row by row.
    fn project(&self, v: &mut [f64]) {
        let nn = self.w.len();
        for row in v.chunks_mut(nn) {
            for phi in &self.modes {
                let c = crate::grid::dot(self.w, phi, row);
                row.iter_mut().zip(phi.iter()).for_each(|(a, b)| *a -= c * b);
            }
        }
    }

    /// P^T g = g - sum M phi <phi, g>, row by row.
    fn project_dual(&self, g: &mut [f64]) {
        let nn = self.w.len();
        for row in g.chunks_mut(nn) {
            for phi in &self.modes {
                let c: f64 = phi.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                for k in 0..nn {
                    row[k] -= c * self.w[k] * phi[k];
                }
            }
        }
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize the Dirichlet energy of Lv = f over fields orthogonal to the modes
/// with gamma_i < mu. With `seed` the iteration starts from a random
/// admissible field instead of zero.
pub fn complement_energy_minimizer(
    spectrum: &Spectrum,
    f: &CylinderField,
    mu: f64,
    seed: Option<u64>,
) -> Result<(CylinderField, MinimizerReport)> {
    let op = spectrum.operator();
    let grid = f.grid().clone();
    let dst = DstSolver::new(op, &grid)?;
    let (m, nn) = (dst.m, op.len());
    let w = op.weights();
    let low = spectrum.gammas().iter().take_while(|&&g| g < mu).count();
    if low == spectrum.count() {
        return Err(Error::Resolution(format!("no computed exponent exceeds mu = {mu}")));
    }
    let proj = Projector {
        modes: (0..low).map(|i| spectrum.mode(i)).collect(),
        w,
    };
    for j in 0..grid.nt() {
        let row = f.row(j);
        let size = op.dot(row, row).sqrt();
        for (i, phi) in proj.modes.iter().enumerate() {
            let c = op.dot(phi, row);
            if c.abs() > super::modal::ORTHOGONALITY_TOLERANCE * size {
                return Err(Error::Precondition(format!(
                    "right-hand side has component {c:.3e} on mode {} at t = {}",
                    i + 1,
                    grid.t(j)
                )));
            }
        }
    }
    // Linear term b = A_t (M f) on interior rows.
    let mut b = vec![0.0; m * nn];
    for j in 0..m {
        let (p, c, n) = (f.row(j), f.row(j + 1), f.row(j + 2));
        for k in 0..nn {
            b[j * nn + k] = w[k] * (p[k] + 10.0 * c[k] + n[k]) / 12.0;
        }
    }
    proj.project_dual(&mut b);
    let mut u = vec![0.0; m * nn];
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = f.max_abs().max(1e-300);
        u.iter_mut().for_each(|x| *x = scale * rng.gen_range(-1.0..1.0));
        proj.project(&mut u);
    }
    let grad = |u: &[f64]| -> Vec<f64> {
        let mut g = dst.apply(u);
        g.iter_mut().zip(&b).for_each(|(g, b)| *g += b);
        proj.project_dual(&mut g);
        g
    };
    let precondition = |g: &[f64]| -> Result<Vec<f64>> {
        let mut z = dst.solve(g)?;
        proj.project(&mut z);
        Ok(z)
    };
    let bnorm = dotv(&b, &b).sqrt();
    let mut g = grad(&u);
    let mut iterations = 0;
    if bnorm > 0.0 || seed.is_some() {
        let target = GRADIENT_TOLERANCE * bnorm.max(dotv(&g, &g).sqrt());
        let mut z = precondition(&g)?;
        let mut p: Vec<f64> = z.iter().map(|x| -x).collect();
        let mut gz = dotv(&g, &z);
        while dotv(&g, &g).sqrt() > target {
            if iterations == MAX_ITERATIONS {
                return Err(Error::Convergence {
                    message: "complement minimizer did not converge".into(),
                    last_residual: dotv(&g, &g).sqrt(),
                    history: Vec::new(),
                    last_iterate: Vec::new(),
                });
            }
            iterations += 1;
            let mut hp = dst.apply(&p);
            proj.project_dual(&mut hp);
            let php = dotv(&p, &hp);
            if !(php > 0.0) {
                return Err(Error::Resolution("energy is not positive on the complement".into()));
            }
            let alpha = gz / php;
            u.iter_mut().zip(&p).for_each(|(u, p)| *u += alpha * p);
            g.iter_mut().zip(&hp).for_each(|(g, hp)| *g += alpha * hp);
            z = precondition(&g)?;
            let gz_new = dotv(&g, &z);
            let beta = gz_new / gz;
            gz = gz_new;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = -z + beta * *p);
        }
    }
    proj.project(&mut u);
    let hu = dst.apply(&u);
    let energy = 0.5 * dotv(&u, &hu) + dotv(&u, &b);
    let mut values = vec![0.0; grid.nt() * nn];
    values[nn..(m + 1) * nn].copy_from_slice(&u);
    let v = CylinderField::new(grid, values)?;
    Ok((
        v,
        MinimizerReport {
            iterations,
            gradient_norm: dotv(&g, &g).sqrt(),
            energy,
            random_start: seed.is_some(),
        },
    ))
}
