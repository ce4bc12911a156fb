use conic_ln::cylinder::{
    apply_cyl_operator, trusted_rows, truncation_length, weighted_norm_window, CylinderField, CylinderGrid,
    CylinderSolver, WeightedNormSpec,
};
use conic_ln::grid::AngularGrid;
use conic_ln::index_set::build_index_chain;
use conic_ln::profile::{solve_profile, ProfileOptions};
use conic_ln::spectrum::compute_spectrum;

fn main() -> conic_ln::Result<()> {
    let grid = AngularGrid::build(3, std::f64::consts::FRAC_PI_2, 200, 2.0)?;
    let sp = compute_spectrum(&solve_profile(&grid, &ProfileOptions::default())?, 6)?;
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6)?;
    let solver = CylinderSolver::new(&sp)?;
    let (t0, mu) = (1.0, 4.5);
    let s = sp.operator().constants().s;
    let cg = CylinderGrid::build(sp.grid().clone(), t0, t0 + truncation_length(mu, sp.gammas())?, 0.02)?;

    let g: Vec<f64> = sp.operator().rho().iter().zip(grid.nodes()).map(|(r, p)| r.powf(s) * (1.0 + 0.3 * p.sin())).collect();
    let vstar = CylinderField::separable(cg.clone(), |t| (-mu * t).exp() * (1.0 - (-2.0 * (t - t0)).exp()).powi(2), &g);
    let f = apply_cyl_operator(sp.operator(), &vstar)?;
    let (v, report) = solver.invert(&chain, &f, mu)?;

    let spec = WeightedNormSpec::new(mu, s, 0)?;
    let rho = sp.operator().rho();
    let end = trusted_rows(&cg);
    let err = weighted_norm_window(&v.add_scaled(-1.0, &vstar)?, &spec, rho, 0, end)
        / weighted_norm_window(&vstar, &spec, rho, 0, end);
    println!("low modes {}, trusted until t = {:.2}", report.low_modes, report.trusted_until);
    println!("weighted recovery error {err:.3e}");
    Ok(())
}
