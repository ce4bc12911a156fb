use conic_ln::contraction::{picard_solve, reconstruct_cone_solution, PicardOptions};
use conic_ln::expansion::{correct_to_order, free_data_modes};
use conic_ln::grid::AngularGrid;
use conic_ln::index_set::build_index_chain;
use conic_ln::profile::{solve_profile, ProfileOptions};
use conic_ln::spectrum::compute_spectrum;

fn main() -> conic_ln::Result<()> {
    let grid = AngularGrid::build(3, std::f64::consts::FRAC_PI_2, 200, 2.0)?;
    let profile = solve_profile(&grid, &ProfileOptions::default())?;
    let sp = compute_spectrum(&profile, 8)?;
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6)?;
    let mu = 6.5;
    let exp = correct_to_order(&free_data_modes(&sp, &chain, &[0.1, 0.0])?, &chain, mu)?;
    let sol = picard_solve(&exp, &chain, mu, 1.0, &PicardOptions::default())?;
    let r = &sol.report;
    println!("converged {} in {} iterations, lambda {:.3e}", r.converged, r.iterates.len(), r.lambda);
    println!("final residual {:.3e}, decay rate {:?}", r.final_residual, r.decay_fit.rate);

    let cone = reconstruct_cone_solution(&sol.v(), &profile)?;
    for phi in [0.0, 0.5, 1.0] {
        println!("u(0.2, {phi}) = {:.6}", cone.u(0.2, phi)?);
    }
    Ok(())
}
