// Inference when the moment matrix is singular: a source appears twice, so
// the weights are not identified, yet the prediction interval remains valid.

use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::{inference, AnalysisConfig, MultiRegionDataset};

fn run_example() -> syndecomp::Result<()> {
    let spec = McSpec::new(Family::Linear, 500, 0.9, Preset::Reduced);
    let (data, truth) = simulation::generate_mc_data(&spec, 6, 0)?;
    let mut sources = data.sources.clone();
    let mut copy = sources[1].clone();
    copy.region_id = "2-copy".into();
    sources.push(copy);
    let dup = MultiRegionDataset::new(data.covariate_names.clone(), data.target.clone(), sources)?;

    let config = AnalysisConfig {
        bootstrap_draws: 99,
        simplex_grid_size: 1000,
        robust_mode: true,
        ..AnalysisConfig::default()
    };
    let out = inference::infer(&dup, &spec.policy(), &config)?;
    let r = &out.report;
    println!("smallest eigenvalue of H {:.2e}", r.h_min_eigenvalue);
    println!("w_hat {:?} (degenerate {})", r.w_hat, r.weight_degenerate);
    println!(
        "interval [{:.4}, {:.4}], true {:.4}",
        r.interval.lower.unwrap_or(f64::NAN),
        r.interval.upper.unwrap_or(f64::NAN),
        truth.theta0
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
