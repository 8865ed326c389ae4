// The simplex-constrained quadratic program behind the synthetic weights,
// with its KKT certificate.

use nalgebra::{DMatrix, DVector};
use syndecomp::weights::solve_simplex_qp;
use syndecomp::MomentSystem;

fn run_example() -> syndecomp::Result<()> {
    // target = 0.3 m1 + 0.7 m2 exactly; m3 is irrelevant
    let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 1.0, 0.3, 0.1, 0.3, 2.0]);
    let w0 = DVector::from_column_slice(&[0.3, 0.7, 0.0]);
    let hv = &h * &w0;
    let c = w0.dot(&hv);
    let sys = MomentSystem::new(h, hv, c, 500)?;
    let sol = solve_simplex_qp(&sys)?;
    println!("w {:?}", sol.w);
    println!("rho^2 {:.2e}; active set {:?}", sol.rho_sq, sol.active_set);
    println!("multipliers {:?}", sol.lambda);
    sol.verify_kkt(&sys).map_err(syndecomp::Error::Validation)?;

    // duplicated source: the minimizer is not unique
    let dup = MomentSystem::new(DMatrix::from_element(2, 2, 1.0), DVector::from_element(2, 1.0), 1.0, 500)?;
    let s = solve_simplex_qp(&dup)?;
    println!("duplicated sources: w {:?} degenerate {}", s.w, s.degenerate);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
