// A covariate-shift policy: a known index `c'x` and a shift applied only
// to observations inside a selection box.

use rand::Rng;
use syndecomp::dataset::ColumnBound;
use syndecomp::{pipeline, FitOptions, MultiRegionDataset, PolicySpec, RegionSample};

fn region(id: &str, n: usize, f: impl Fn(f64) -> f64, seed: u64) -> syndecomp::Result<RegionSample> {
    let mut rng = syndecomp::rng::stream(seed, id, 0);
    let loading = [1.0, 0.5];
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row = vec![rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0 - 1.0];
        let mu = loading[0] * row[0] + loading[1] * row[1];
        y.push(f(mu) + 0.3 * (rng.random::<f64>() - 0.5));
        x.push(row);
    }
    RegionSample::new(id, y, x, None)
}

fn run_example() -> syndecomp::Result<()> {
    let n = 600;
    let data = MultiRegionDataset::new(
        vec!["hours".into(), "skill".into()],
        region("t", n, |m| 0.5 * m + 0.25 * m * m, 1)?,
        vec![
            region("s1", n, |m| m, 2)?,
            region("s2", n, |m| 0.5 * m * m, 3)?,
            region("s3", n, |m| 1.0 - m, 4)?,
        ],
    )?;
    // add half an hour for everyone with positive skill
    let policy = PolicySpec::CovariateShift {
        loading: vec![1.0, 0.5],
        shift: vec![0.5, 0.0],
        selection: vec![ColumnBound { column: 1, lower: 0.0, upper: f64::INFINITY }],
    };
    let est = pipeline::estimate(&data, &policy, &FitOptions::default())?;
    println!("w_hat {:?}", est.weights.w);
    println!(
        "prediction {:.4} = matched {:.4} + synthetic {:.4}; matched share {:.3}",
        est.prediction.theta,
        est.prediction.matched_contribution,
        est.prediction.unmatched_contribution,
        est.prediction.matched_fraction
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
