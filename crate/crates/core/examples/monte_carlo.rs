// A small Monte Carlo study on the built-in designs.

use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::AnalysisConfig;

fn run_example() -> syndecomp::Result<()> {
    let config = AnalysisConfig::default();
    let mut results = Vec::new();
    for s in [0.5, 0.9] {
        let mut spec = McSpec::new(Family::Linear, 500, s, Preset::Reduced);
        spec.replications = 40;
        spec.bootstrap_draws = 99;
        results.push(simulation::run_mc(&spec, &config)?);
    }
    simulation::write_coverage_csv(&results, std::io::stdout())?;
    println!();
    simulation::write_accuracy_csv(&results, std::io::stdout())?;
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
