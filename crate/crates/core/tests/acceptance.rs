//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so every line prints.

mod common;

use std::ffi::OsString;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use syndecomp::arf;
use syndecomp::inference::project_cone;
use syndecomp::simulation::{self, Family, McResult, McSpec, Preset};
use syndecomp::weights::solve_simplex_qp;
use syndecomp::AnalysisConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config() -> AnalysisConfig {
    AnalysisConfig {
        master_seed: 20240601,
        ..AnalysisConfig::default()
    }
}

fn mc(family: Family, n0: usize, s: f64, replications: usize, draws: usize) -> McResult {
    let mut spec = McSpec::new(family, n0, s, Preset::Reduced);
    spec.replications = replications;
    spec.bootstrap_draws = draws;
    simulation::run_mc(&spec, &config()).expect("monte carlo run")
}

fn c1_coverage(linear_1000_09: &McResult) -> Outcome {
    let cov = linear_1000_09.coverage.unwrap();
    outcome(
        cov >= 0.93,
        format!(
            "coverage {cov:.3} >= 0.93 (R={}, B={}, avg length {:.4})",
            linear_1000_09.spec.replications,
            linear_1000_09.spec.bootstrap_draws,
            linear_1000_09.avg_ci_length.unwrap_or(f64::NAN)
        ),
    )
}

fn c2_point_accuracy() -> Outcome {
    let r = mc(Family::Linear, 1000, 0.9, 1000, 0);
    let pass = (0.012..=0.025).contains(&r.rmse_theta)
        && r.bias_theta.abs() <= 0.01
        && (0.18..=0.35).contains(&r.rmse_w);
    outcome(
        pass,
        format!(
            "RMSE(theta) {:.4} in [0.012,0.025], |bias| {:.4} <= 0.01, RMSE(w) {:.4} in [0.18,0.35] (root-mean-square distance {:.4})",
            r.rmse_theta,
            r.bias_theta.abs(),
            r.rmse_w,
            r.rms_w_error
        ),
    )
}

fn c3_nonlinear() -> Outcome {
    let c = Family::Nonlinear.coefficients()[0];
    let g0 = |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
    let theta0 = common::simpson(g0, 0.0, 1.0, 1000);
    let analytic_ok = (theta0 - (-0.317)).abs() < 5e-4
        && (theta0 - Family::Nonlinear.true_theta()).abs() < 1e-12;
    let r = mc(Family::Nonlinear, 1000, 0.5, 1000, 0);
    outcome(
        analytic_ok && (0.025..=0.05).contains(&r.rmse_theta),
        format!(
            "theta0 by quadrature {theta0:.6} (rounds to -0.317), RMSE(theta) {:.4} in [0.025,0.05]",
            r.rmse_theta
        ),
    )
}

fn c4_lengths(linear_1000_09: &McResult) -> Outcome {
    let a = linear_1000_09.avg_ci_length.unwrap();
    let b = mc(Family::Linear, 500, 0.9, 300, 299).avg_ci_length.unwrap();
    let c = mc(Family::Linear, 500, 0.5, 300, 299).avg_ci_length.unwrap();
    outcome(
        a < b && b < c,
        format!("lengths (1000,.9) {a:.4} < (500,.9) {b:.4} < (500,.5) {c:.4}"),
    )
}

fn c5_qp_oracle() -> Outcome {
    let mut rng = common::rng(5);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..100 {
        let k = 2 + i % 5;
        let sys = common::random_system(&mut rng, k);
        let sol = solve_simplex_qp(&sys).unwrap();
        let (_, oracle) = common::qp_oracle(&sys.h_mat, &sys.h_vec);
        worst = worst.max(sys.objective(&sol.w_vec()) - oracle);
    }
    outcome(
        worst <= 1e-6,
        format!("100 instances, K in 2..=6, max objective gap {worst:.2e} <= 1e-6"),
    )
}

fn c6_cone_oracle() -> Outcome {
    let mut rng = common::rng(6);
    let mut worst = 0.0f64;
    let mut df_mismatch = 0;
    for i in 0..1000 {
        let k = 2 + i % 4;
        let w = common::random_sparse_simplex(&mut rng, k);
        let raw = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let y = raw.add_scalar(-w.dot(&raw));
        let omega = common::random_psd(&mut rng, k, k) + DMatrix::identity(k, k) * 0.1;
        let n0 = rng.random_range(10..2000);
        let p = project_cone(&y, &omega, &w, n0).unwrap();
        let (t, df) = common::cone_oracle(&y, &omega, &w, n0);
        worst = worst.max((p.t_value - t).abs());
        df_mismatch += usize::from(p.df != df);
    }
    outcome(
        worst <= 1e-8 && df_mismatch == 0,
        format!("1000 instances, K <= 5, max |dT| {worst:.2e} <= 1e-8, df mismatches {df_mismatch}"),
    )
}

fn c7_population() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for fam in [Family::Linear, Family::Nonlinear] {
        for s in [0.5, 0.9] {
            let sys = simulation::population_system(fam, s).unwrap();
            let sol = solve_simplex_qp(&sys).unwrap();
            let w0 = DVector::from_column_slice(&fam.true_weights());
            let err = (sol.w_vec() - &w0).amax();
            let rho = sys.rho_sq(&w0).abs();
            pass &= err <= 1e-8 && rho <= 1e-12;
            parts.push(format!("{fam:?} s={s}: |w-w0| {err:.1e}, rho2(w0) {rho:.1e}"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn c8_size(linear_1000_09: &McResult) -> Outcome {
    let rate = linear_1000_09.rejection_rate.unwrap();
    outcome(
        rate <= 0.07,
        format!(
            "rejection rate {rate:.3} <= 0.07 over {} simulations at alpha 0.05",
            linear_1000_09.completed
        ),
    )
}

fn c9_honore_powell() -> Outcome {
    let gamma = [1.0, -0.5];
    let errs: Vec<f64> = {
        use rayon::prelude::*;
        (0..200u64)
            .into_par_iter()
            .map(|r| {
                let s = simulation::censored_index_sample(2000, &gamma, 1.0, 0.3, 9, r).unwrap();
                let g = arf::fit_censored_index(&s).unwrap().gamma;
                ((g[0] - gamma[0]).powi(2) + (g[1] - gamma[1]).powi(2)).sqrt()
            })
            .collect()
    };
    let mut sorted = errs.clone();
    sorted.sort_by(f64::total_cmp);
    let median = syndecomp::distributions::quantile_sorted(&sorted, 0.5);
    let exact = simulation::censored_index_sample(500, &gamma, 0.0, 0.0, 9, 0).unwrap();
    let g = arf::fit_censored_index(&exact).unwrap().gamma;
    let exact_err = (g[0] - gamma[0]).abs().max((g[1] - gamma[1]).abs());
    outcome(
        median <= 0.1 && exact_err <= 1e-6,
        format!("median error {median:.4} <= 0.1 (200 x n=2000), uncensored exact fit error {exact_err:.1e} <= 1e-6"),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = McSpec::new(Family::Linear, 300, 0.9, Preset::Reduced);
    let (data, _) = simulation::generate_mc_data(&spec, 10, 0).unwrap();
    let path = dir.path().join("fixture.csv");
    syndecomp::dataset::write_csv(&data, std::fs::File::create(&path).unwrap()).unwrap();
    let run = |jobs: &str| {
        let argv: Vec<OsString> = [
            "syndecomp",
            "--jobs",
            jobs,
            "infer",
            "--data",
            path.to_str().unwrap(),
            "--index-column",
            "0",
            "--post-scale",
            &(1.0 / 0.9f64).to_string(),
            "--post-offset",
            &(-(0.1f64) / 0.9).to_string(),
            "--bootstrap-draws",
            "199",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = syndecomp::cli::run(argv, &mut out, &mut err);
        (code, out)
    };
    let (c1, a) = run("1");
    let (c2, b) = run("3");
    outcome(
        c1 == c2 && !a.is_empty() && a == b,
        format!("--jobs 1 vs --jobs 3: exit codes {c1}/{c2}, {} report bytes, identical {}", a.len(), a == b),
    )
}

fn main() {
    let mut all = true;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        all &= o.pass;
        println!(
            "criterion {n:>2} {name}: {} | {} | {:.1}s",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    let start = Instant::now();
    let shared = mc(Family::Linear, 1000, 0.9, 300, 299);
    println!(
        "shared run: linear n0=1000 s=0.9 R=300 B=299 in {:.1}s",
        start.elapsed().as_secs_f64()
    );
    report(1, "MC coverage", &mut || c1_coverage(&shared));
    report(2, "MC point accuracy", &mut c2_point_accuracy);
    report(3, "MC nonlinear", &mut c3_nonlinear);
    report(4, "CI length ordering", &mut || c4_lengths(&shared));
    report(5, "QP oracle", &mut c5_qp_oracle);
    report(6, "cone-projection oracle", &mut c6_cone_oracle);
    report(7, "population exactness", &mut c7_population);
    report(8, "transferability size", &mut || c8_size(&shared));
    report(9, "censored index recovery", &mut c9_honore_powell);
    report(10, "determinism across workers", &mut c10_determinism);
    if !all {
        std::process::exit(1);
    }
}
