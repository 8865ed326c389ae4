// Weights that differ across levels of a discrete target covariate.

use syndecomp::simulation::{self, Family, McSpec, Preset};
use syndecomp::{pipeline, FitOptions, MultiRegionDataset, RegionSample};

fn with_group(r: &RegionSample) -> syndecomp::Result<RegionSample> {
    // two groups by the parity of the row position
    let rows = r.rows().enumerate().map(|(i, x)| vec![x[0], (i % 2) as f64]).collect();
    RegionSample::new(r.region_id.clone(), r.outcomes.clone(), rows, r.threshold)
}

fn run_example() -> syndecomp::Result<()> {
    let spec = McSpec::new(Family::Nonlinear, 1000, 0.7, Preset::Reduced);
    let (data, _) = simulation::generate_mc_data(&spec, 2, 0)?;
    let grouped = MultiRegionDataset::new(
        vec!["x".into(), "group".into()],
        with_group(&data.target)?,
        data.sources.iter().map(with_group).collect::<syndecomp::Result<_>>()?,
    )?;
    let g = pipeline::estimate_groupwise(&grouped, &spec.policy(), &FitOptions::default(), "group")?;
    for level in &g.groups {
        match &level.weights {
            Some(w) => println!("group {}: n {} w {:?}", level.level, level.n_target, w.w),
            None => println!("group {}: failed: {:?}", level.level, level.error),
        }
    }
    println!("prediction with group weights {:?}", g.theta);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
