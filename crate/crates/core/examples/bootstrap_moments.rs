// The bootstrap pieces on their own: region-wise resampling, the truncated
// covariance of the moment deviations, and the interquartile scale.

use syndecomp::resampling;
use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::{pipeline, FitOptions};

fn run_example() -> syndecomp::Result<()> {
    let spec = McSpec::new(Family::Linear, 500, 0.9, Preset::Reduced);
    let (data, _) = simulation::generate_mc_data(&spec, 9, 0)?;
    let policy = spec.policy();
    let opts = FitOptions::default();
    let est = pipeline::estimate(&data, &policy, &opts)?;
    let run = resampling::bootstrap_draws(&data, |d| pipeline::draw_fit(d, &policy, &opts), 199, 5)?;
    println!("{} of {} draws succeeded", run.draws.len(), run.requested);

    let sys = &est.stage.system;
    let w = est.weights.w_vec();
    let gammas: Vec<_> = run.draws.iter().map(|d| resampling::gamma_star(&d.fit.system, sys, &w)).collect();
    let omega = resampling::omega_hat(&gammas, sys, &w, 0.05)?;
    println!("Omega diagonal {:?}", omega.omega.diagonal().as_slice());
    println!("truncation levels {:?}, clipped entries {}", omega.tau, omega.truncation_hits);

    let stars: Vec<f64> = run.draws.iter().map(|d| d.fit.parts.theta(&est.weights.w)).collect();
    let sigma = resampling::sigma_hat(&stars, est.prediction.theta, sys.n0)?;
    println!("sigma {:.4} from quartiles {:.4}, {:.4}", sigma.sigma, sigma.q25, sigma.q75);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
