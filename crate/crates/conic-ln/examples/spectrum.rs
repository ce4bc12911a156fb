use conic_ln::grid::AngularGrid;
use conic_ln::profile::{solve_profile, ProfileOptions};
use conic_ln::spectrum::compute_spectrum;

fn main() -> conic_ln::Result<()> {
    let grid = AngularGrid::build(3, std::f64::consts::FRAC_PI_2, 600, 2.0)?;
    let p = solve_profile(&grid, &ProfileOptions::default())?;
    let sp = compute_spectrum(&p, 6)?;
    println!("kappa = {}", sp.kappa());
    for i in 0..sp.count() {
        println!(
            "gamma_{} = {:.6}  lambda = {:.6}  decay slope {:.4}",
            i + 1,
            sp.gammas()[i],
            sp.lambdas()[i],
            sp.eigen_decay_slope(i + 1)?
        );
    }
    Ok(())
}
