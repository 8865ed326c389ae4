// Average response functions: cubic least squares and a quartic-kernel
// smoother with leave-one-out bandwidth choice.

use rand::Rng;
use syndecomp::arf::{self, ArfModel};
use syndecomp::{ArfMethod, RegionSample};

fn run_example() -> syndecomp::Result<()> {
    let mut rng = syndecomp::rng::stream(3, "example", 0);
    let n = 800;
    let mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let y: Vec<f64> = mu.iter().map(|m| (2.0 * m).sin() + 0.2 * (rng.random::<f64>() - 0.5)).collect();
    let region = RegionSample::new("r", y, mu.iter().map(|m| vec![*m]).collect(), None)?;

    let poly = arf::fit_arf(ArfMethod::Polynomial, &region, &mu)?;
    let kern = arf::fit_arf(ArfMethod::Kernel, &region, &mu)?;
    if let ArfModel::Kernel { fit, .. } = &kern {
        println!("cross-validated bandwidth {:.4}", fit.bandwidth);
    }
    for m in [-0.5, 0.0, 0.5, 1.2] {
        let p = arf::evaluate_arf(&poly, m)?;
        let truth = (2.0 * m).sin();
        match arf::evaluate_arf(&kern, m) {
            Ok(k) => println!(
                "mu {m:>5}: truth {truth:.3} cubic {:.3} kernel {:.3} extrapolated {}",
                p.value, k.value, p.extrapolated
            ),
            // beyond the support the kernel window can be empty
            Err(e) => println!("mu {m:>5}: cubic {:.3}; kernel: {e}", p.value),
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
