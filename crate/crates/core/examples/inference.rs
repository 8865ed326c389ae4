// Full inference: region-wise bootstrap, weight confidence set,
// transferability test and the interval for the prediction.

use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::{inference, AnalysisConfig};

fn run_example() -> syndecomp::Result<()> {
    let spec = McSpec::new(Family::Nonlinear, 800, 0.9, Preset::Reduced);
    let (data, truth) = simulation::generate_mc_data(&spec, 4, 0)?;
    let config = AnalysisConfig {
        bootstrap_draws: 199,
        simplex_grid_size: 2000,
        master_seed: 11,
        ..AnalysisConfig::default()
    };
    let out = inference::infer(&data, &spec.policy(), &config)?;
    let r = &out.report;
    println!("theta_hat {:.4} (true {:.4})", r.theta_hat, truth.theta0);
    println!(
        "interval [{:.4}, {:.4}] at level {}",
        r.interval.lower.unwrap_or(f64::NAN),
        r.interval.upper.unwrap_or(f64::NAN),
        1.0 - config.alpha
    );
    println!(
        "weight set keeps {} of {} grid points; coordinate ranges {:?} to {:?}",
        r.weight_set.accepted, r.weight_set.grid_size, r.weight_set.lower, r.weight_set.upper
    );
    println!("transferability rejected: {}", r.transferability_rejected);
    if let Some(s) = &r.sigma {
        println!("bootstrap scale {:.4}", s.sigma);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
