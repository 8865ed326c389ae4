// The cone-projection statistic at individual weights and the resulting
// confidence set on a simplex grid.

use nalgebra::{DMatrix, DVector};
use syndecomp::inference::{cc_statistic, project_cone, simplex_grid, weight_confidence_set};
use syndecomp::MomentSystem;

fn run_example() -> syndecomp::Result<()> {
    // y has a negative entry where w is zero: the cone absorbs it
    let y = DVector::from_column_slice(&[0.2, -0.1, -0.3]);
    let w = DVector::from_column_slice(&[0.5, 0.5, 0.0]);
    let p = project_cone(&y, &DMatrix::identity(3, 3), &w, 1)?;
    println!("lambda {:?} T {:.3} df {}", p.lambda, p.t_value, p.df);

    let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.0]);
    let hv = &h * DVector::from_column_slice(&[0.6, 0.4, 0.0]);
    let sys = MomentSystem::new(h, hv, 0.0, 400)?;
    let omega = DMatrix::identity(3, 3) * 0.5;
    let metric = omega.clone().try_inverse().expect("invertible");
    for w in [[0.6, 0.4, 0.0], [0.2, 0.2, 0.6]] {
        let g = cc_statistic(&sys, &metric, &DVector::from_column_slice(&w));
        println!("T({w:?}) = {:.3} with df {}", g.t_value, g.df);
    }
    let set = weight_confidence_set(&sys, &omega, 0.005, &simplex_grid(3, 3000, 1))?;
    println!("accepted {} of {} grid points", set.accepted.iter().filter(|a| **a).count(), set.points.len());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
