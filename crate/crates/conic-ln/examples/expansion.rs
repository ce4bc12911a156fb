use conic_ln::expansion::{assumption_check, correct_to_order, free_data_modes, nonlinear_residual_expansion};
use conic_ln::grid::AngularGrid;
use conic_ln::index_set::build_index_chain;
use conic_ln::profile::{solve_profile, ProfileOptions};
use conic_ln::spectrum::compute_spectrum;

fn main() -> conic_ln::Result<()> {
    let grid = AngularGrid::build(3, std::f64::consts::FRAC_PI_2, 300, 2.0)?;
    let sp = compute_spectrum(&solve_profile(&grid, &ProfileOptions::default())?, 8)?;
    let chain = build_index_chain(sp.gammas(), 12.0, 1e-6)?;
    let mut c = vec![0.0; chain.k1];
    c[0] = 0.1;
    let mu = 6.5;
    let free = free_data_modes(&sp, &chain, &c)?;
    let before = nonlinear_residual_expansion(&free, mu)?;
    println!("families below mu before correction: {}", before.below.len());

    let exp = correct_to_order(&free, &chain, mu)?;
    for t in exp.terms() {
        println!("term rate {:.6} power t^{}", t.gamma, t.j);
    }
    let a = assumption_check(&exp, mu, (1.0, 4.0))?;
    println!("residual decay rate {:.4} (target {mu}), x0 = {:.3e}", a.residual_rate.unwrap_or(f64::NAN), a.x0);
    Ok(())
}
