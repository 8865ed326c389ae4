// Load a long-format CSV, estimate the synthetic weights and the
// counterfactual prediction, and compare the two status-quo predictions.

use syndecomp::dataset::{self, AffineMap, CsvSchema};
use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::{pipeline, FitOptions, PolicySpec};

fn run_example() -> syndecomp::Result<()> {
    // one simulated draw stands in for a user-supplied file
    let spec = McSpec::new(Family::Linear, 1000, 0.9, Preset::Reduced);
    let (sim, truth) = simulation::generate_mc_data(&spec, 1, 0)?;
    let mut csv = Vec::new();
    dataset::write_csv(&sim, &mut csv)?;

    let data = dataset::read_csv(csv.as_slice(), &CsvSchema::default())?;
    let policy = PolicySpec::IdentityIndex {
        column: 0,
        pre: AffineMap::IDENTITY,
        post: AffineMap { scale: 1.0 / 0.9, offset: -0.1 / 0.9 },
    };
    let est = pipeline::estimate(&data, &policy, &FitOptions::default())?;
    println!("target {} sources {:?}", data.target.region_id, data.sources.iter().map(|r| &r.region_id).collect::<Vec<_>>());
    println!("w_hat {:?} (true {:?})", est.weights.w, truth.w0);
    println!(
        "theta_hat {:.4} (true {:.4}); matched share {:.3}",
        est.prediction.theta, truth.theta0, est.prediction.matched_fraction
    );
    let check = pipeline::status_quo_cross_check(&data, &policy, &est)?;
    println!(
        "status quo: synthetic {:.4} vs target-only {:.4}",
        check.synthetic, check.target_only
    );
    assert!((est.prediction.theta - truth.theta0).abs() < 0.1);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
