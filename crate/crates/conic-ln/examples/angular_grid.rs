use conic_ln::grid::{laplace_apply, AngularField, AngularGrid};

fn main() -> conic_ln::Result<()> {
    let grid = AngularGrid::build(3, 1.2, 200, 2.0)?;
    println!("{} nodes, measure {:.12}", grid.len(), grid.measure());
    // The weights integrate sin^{n-2}(phi) dphi.
    println!("exact 1 - cos(1.2)        {:.12}", 1.0 - 1.2f64.cos());

    // cos(phi) is an eigenfunction of the sphere Laplacian with eigenvalue -(n-1).
    let f = AngularField::from_fn(grid.clone(), f64::cos);
    let lap = laplace_apply(&grid, &f)?;
    let k = grid.len() / 2;
    println!("Lap(cos)/cos at phi = {:.4}: {:.6}", grid.nodes()[k], lap.values()[k] / f.values()[k]);
    Ok(())
}
