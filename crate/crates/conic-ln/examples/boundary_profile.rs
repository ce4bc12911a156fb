use conic_ln::grid::AngularGrid;
use conic_ln::profile::{blowup_rate_check, solve_profile, ProfileOptions};

fn main() -> conic_ln::Result<()> {
    for n in [3, 4] {
        let grid = AngularGrid::build(n, std::f64::consts::FRAC_PI_2, 1000, 2.0)?;
        let p = solve_profile(&grid, &ProfileOptions::default())?;
        let err = grid.nodes().iter().zip(p.rho()).fold(0.0f64, |m, (x, r)| m.max((r - x.cos()).abs()));
        let blowup = blowup_rate_check(&p)?;
        println!(
            "n = {n}: sup|rho - cos| = {err:.2e}, boundary slope {:.9}, blow-up exponent {:.4}",
            p.boundary_slope(),
            blowup.slope
        );
    }
    Ok(())
}
