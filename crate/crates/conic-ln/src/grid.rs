//! Graded meshes on the polar angle of a geodesic cap, with the weighted
//! quadrature and the axisymmetric Laplace-Beltrami operator.

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate};
use std::fmt::Write as _;
use std::sync::Arc;

/// Cell-centred graded mesh on [0, phi_max).
///
/// Nodes sit at `phi_max * (1 - (1 - x_k)^p)` with `x_k = (k + 1/2) / (N + 1/2)`,
/// so the first node is half a cell off the axis and the boundary lies one full
/// cell beyond the last node. Control cells are bounded by the arithmetic
/// midpoints between nodes; the last cell extends to `phi_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    n: usize,
    phi_max: f64,
    grading: f64,
    nodes: Vec<f64>,
    faces: Vec<f64>,
    weights: Vec<f64>,
    flux: Vec<f64>,
}

impl AngularGrid {
    pub fn build(n: usize, phi_max: f64, node_count: usize, grading: f64) -> Result<Arc<Self>> {
        if n < 3 {
            return Err(Error::Parameter(format!("n = {n} must be at least 3")));
        }
        if !(phi_max > 0.0 && phi_max < std::f64::consts::PI) {
            return Err(Error::Parameter(format!("phi_max = {phi_max} must lie in (0, pi)")));
        }
        if node_count < 16 {
            return Err(Error::Parameter(format!("node_count = {node_count} must be at least 16")));
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return Err(Error::Parameter(format!("grading exponent {grading} must be >= 1")));
        }
        let nn = node_count;
        let delta = 1.0 / (nn as f64 + 0.5);
        let nodes: Vec<f64> = (0..nn)
            .map(|k| {
                let x = (k as f64 + 0.5) * delta;
                phi_max * (1.0 - (1.0 - x).powf(grading))
            })
            .collect();
        let mut faces = Vec::with_capacity(nn + 1);
        faces.push(0.0);
        for k in 1..nn {
            faces.push(0.5 * (nodes[k - 1] + nodes[k]));
        }
        faces.push(phi_max);
        let rule = gauss_legendre(8);
        let m = (n - 2) as i32;
        let weights: Vec<f64> = (0..nn)
            .map(|k| integrate(|p| p.sin().powi(m), faces[k], faces[k + 1], &rule))
            .collect();
        let mut flux = Vec::with_capacity(nn);
        for k in 0..nn {
            let right = if k + 1 < nn { nodes[k + 1] } else { phi_max };
            let mid = 0.5 * (nodes[k] + right);
            flux.push(mid.sin().powi(m) / (right - nodes[k]));
        }
        Ok(Arc::new(AngularGrid {
            n,
            phi_max,
            grading,
            nodes,
            faces,
            weights,
            flux,
        }))
    }

    pub fn dimension(&self) -> usize {
        self.n
    }
    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }
    pub fn grading_exponent(&self) -> f64 {
        self.grading
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Control-cell boundaries, `len() + 1` values from 0 to `phi_max`.
    pub fn faces(&self) -> &[f64] {
        &self.faces
    }
    /// Flux coefficient between node k and node k+1 (the boundary for the last node):
    /// `sin^{n-2}` at the edge midpoint divided by the edge length.
    pub fn flux(&self) -> &[f64] {
        &self.flux
    }

    /// Distance from each node to the boundary circle.
    pub fn boundary_distance(&self) -> Vec<f64> {
        self.nodes.iter().map(|p| self.phi_max - p).collect()
    }

    /// Closed-form integral of the measure over the cap.
    pub fn measure(&self) -> f64 {
        let rule = gauss_legendre(16);
        let m = (self.n - 2) as i32;
        let pieces = 64;
        (0..pieces)
            .map(|i| {
                let a = self.phi_max * i as f64 / pieces as f64;
                let b = self.phi_max * (i + 1) as f64 / pieces as f64;
                integrate(|p| p.sin().powi(m), a, b, &rule)
            })
            .sum()
    }

    pub fn same_shape(&self, other: &AngularGrid) -> bool {
        self.n == other.n
            && self.phi_max == other.phi_max
            && self.grading == other.grading
            && self.nodes.len() == other.nodes.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("phi,weight\n");
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            let _ = writeln!(s, "{p:e},{w:e}");
        }
        s
    }
}

/// A function of the polar angle sampled at the nodes of a grid.
#[derive(Debug, Clone)]
pub struct AngularField {
    grid: Arc<AngularGrid>,
    values: Vec<f64>,
}

impl AngularField {
    pub fn new(grid: Arc<AngularGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(AngularField { grid, values })
    }

    pub fn from_fn(grid: Arc<AngularGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&p| f(p)).collect();
        AngularField { grid, values }
    }

    pub fn zeros(grid: Arc<AngularGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        AngularField { grid, values }
    }

    pub fn grid(&self) -> &Arc<AngularGrid> {
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

    fn check(&self, grid: &AngularGrid) -> Result<()> {
        if !self.grid.same_shape(grid) {
            return Err(Error::Shape("field lives on a different grid".into()));
        }
        Ok(())
    }
}

/// Finite-volume Laplacian with prescribed boundary value `g` at `phi_max`.
/// The axis face carries no flux, which is the reflection condition f'(0) = 0.
pub fn laplace_dirichlet(grid: &AngularGrid, f: &[f64], g: f64, out: &mut [f64]) {
    let nn = grid.len();
    let c = grid.flux();
    let w = grid.weights();
    for k in 0..nn {
        let right = if k + 1 < nn { f[k + 1] } else { g };
        let mut acc = c[k] * (right - f[k]);
        if k > 0 {
            acc -= c[k - 1] * (f[k] - f[k - 1]);
        }
        out[k] = acc / w[k];
    }
}

/// Quadratic extrapolation of nodal values to the boundary angle.
pub fn extrapolate_to_boundary(grid: &AngularGrid, f: &[f64]) -> f64 {
    let nn = grid.len();
    let x = grid.nodes();
    let b = grid.phi_max();
    let (x0, x1, x2) = (x[nn - 3], x[nn - 2], x[nn - 1]);
    let l0 = (b - x1) * (b - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (b - x0) * (b - x2) / ((x1 - x0) * (x1 - x2));
    f[nn - 1] + l0 * (f[nn - 3] - f[nn - 1]) + l1 * (f[nn - 2] - f[nn - 1])
}

/// Discrete Laplace-Beltrami operator on axisymmetric functions. The boundary
/// value is extrapolated from the last three nodes, so constants map to zero.
pub fn laplace_apply(grid: &AngularGrid, f: &AngularField) -> Result<AngularField> {
    f.check(grid)?;
    let g = extrapolate_to_boundary(grid, &f.values);
    let mut out = vec![0.0; grid.len()];
    laplace_dirichlet(grid, &f.values, g, &mut out);
    AngularField::new(f.grid.clone(), out)
}

/// Weighted L2 pairing on the cap.
pub fn inner_product(grid: &AngularGrid, f: &AngularField, g: &AngularField) -> Result<f64> {
    f.check(grid)?;
    g.check(grid)?;
    Ok(dot(grid.weights(), &f.values, &g.values))
}

pub(crate) fn dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
}

/// Three-point nonuniform central first derivative. Uses the even reflection at
/// the axis and the boundary value `g` beyond the last node.
pub fn gradient(grid: &AngularGrid, f: &[f64], g: f64) -> Vec<f64> {
    let x = grid.nodes();
    let nn = grid.len();
    let mut d = vec![0.0; nn];
    for k in 0..nn {
        let (xl, fl) = if k == 0 { (-x[0], f[0]) } else { (x[k - 1], f[k - 1]) };
        let (xr, fr) = if k + 1 < nn {
            (x[k + 1], f[k + 1])
        } else {
            (grid.phi_max(), g)
        };
        let hm = x[k] - xl;
        let hp = xr - x[k];
        d[k] = -hp / (hm * (hm + hp)) * fl + (hp - hm) / (hm * hp) * f[k] + hm / (hp * (hm + hp)) * fr;
    }
    d
}

/// Stencil coefficients (left, centre, right) of [`gradient`] at node k, with the
/// axis reflection folded into the centre coefficient.
pub(crate) fn gradient_stencil(grid: &AngularGrid, k: usize) -> (f64, f64, f64) {
    let x = grid.nodes();
    let nn = grid.len();
    let xl = if k == 0 { -x[0] } else { x[k - 1] };
    let xr = if k + 1 < nn { x[k + 1] } else { grid.phi_max() };
    let hm = x[k] - xl;
    let hp = xr - x[k];
    let a = -hp / (hm * (hm + hp));
    let b = (hp - hm) / (hm * hp);
    let c = hm / (hp * (hm + hp));
    if k == 0 {
        (0.0, a + b, c)
    } else {
        (a, b, c)
    }
}

/// Three-point nonuniform second derivative with the same closures as [`gradient`].
pub fn second_derivative(grid: &AngularGrid, f: &[f64], g: f64) -> Vec<f64> {
    let x = grid.nodes();
    let nn = grid.len();
    let mut d = vec![0.0; nn];
    for k in 0..nn {
        let (xl, fl) = if k == 0 { (-x[0], f[0]) } else { (x[k - 1], f[k - 1]) };
        let (xr, fr) = if k + 1 < nn {
            (x[k + 1], f[k + 1])
        } else {
            (grid.phi_max(), g)
        };
        let hm = x[k] - xl;
        let hp = xr - x[k];
        d[k] = 2.0 * (fl / (hm * (hm + hp)) - f[k] / (hm * hp) + fr / (hp * (hm + hp)));
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    #[test]
    fn uniform_and_graded_spacing() {
        let g = AngularGrid::build(3, FRAC_PI_2, 64, 1.0).unwrap();
        let x = g.nodes();
        let h = x[1] - x[0];
        for k in 1..64 {
            assert!((x[k] - x[k - 1] - h).abs() < 1e-12);
        }
        assert!((FRAC_PI_2 - x[63] - h).abs() < 1e-12);
        let g2 = AngularGrid::build(3, FRAC_PI_2, 64, 2.0).unwrap();
        let last = FRAC_PI_2 - g2.nodes()[63];
        let expect = FRAC_PI_2 / (64.5f64 * 64.5);
        assert!((last - expect).abs() < 1e-14);
        assert!((last / (FRAC_PI_2 / 4096.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn weights_integrate_measure() {
        let g = AngularGrid::build(4, FRAC_PI_2, 200, 2.0).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - std::f64::consts::FRAC_PI_4).abs() < 1e-8);
        let g3 = AngularGrid::build(3, FRAC_PI_2, 100, 2.0).unwrap();
        let one = AngularField::from_fn(g3.clone(), |_| 1.0);
        assert!((inner_product(&g3, &one, &one).unwrap() - 1.0).abs() < 1e-8);
        assert!(g.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn constants_are_harmonic() {
        for n in 3..7 {
            let g = AngularGrid::build(n, FRAC_PI_3, 80, 2.0).unwrap();
            let one = AngularField::from_fn(g.clone(), |_| 1.0);
            let l = laplace_apply(&g, &one).unwrap();
            assert!(l.values().iter().all(|v| v.abs() < 1e-9));
        }
    }

    fn cos_error(n: usize, nodes: usize) -> f64 {
        let g = AngularGrid::build(n, FRAC_PI_2, nodes, 2.0).unwrap();
        let f = AngularField::from_fn(g.clone(), f64::cos);
        let l = laplace_apply(&g, &f).unwrap();
        let lam = -(n as f64 - 1.0);
        g.nodes()[..nodes - 1]
            .iter()
            .zip(l.values())
            .map(|(p, v)| (v - lam * p.cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplacian_of_cosine_converges_at_second_order() {
        for n in [3, 5] {
            let e1 = cos_error(n, 100);
            let e2 = cos_error(n, 200);
            let e3 = cos_error(n, 400);
            assert!(e3 < 1e-3, "n={n}: {e3}");
            assert!((e1 / e2).log2() > 1.9 && (e2 / e3).log2() > 1.9, "{e1} {e2} {e3}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = AngularGrid::build(3, FRAC_PI_2, 32, 2.0).unwrap();
        let b = AngularGrid::build(3, FRAC_PI_2, 40, 2.0).unwrap();
        let f = AngularField::zeros(b.clone());
        assert!(matches!(laplace_apply(&a, &f), Err(Error::Shape(_))));
        assert!(AngularField::new(a, vec![0.0; 3]).is_err());
    }
}
