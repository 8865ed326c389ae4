//! Monte Carlo designs with known synthetic weights, and the harness that
//! measures coverage, interval length and estimation error.
//!
//! One target and three sources share a scalar covariate that is its own
//! policy index. Sources draw `X ~ U[0,1]`; the target draws `X ~ U[1-s, 1]`
//! and the policy maps it to `(X - (1-s))/s ~ U[0,1]`, so a share `s` of the
//! target stays inside its own pre-policy support.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AffineMap, AnalysisConfig, ArfMethod, MultiRegionDataset, PolicySpec, RegionSample};
use crate::error::{Error, Result};
use crate::inference;
use crate::pipeline::{self, FitOptions};
use crate::resampling;
use crate::weights::MomentSystem;

/// Largest tolerated share of failed replications.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Linear,
    Nonlinear,
}

impl Family {
    /// Polynomial coefficients (ascending powers) of the conditional means,
    /// target first.
    pub fn coefficients(self) -> [[f64; 4]; 4] {
        match self {
            Family::Linear => [
                [0.0, 0.4, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [-1.0, 0.5, 0.0, 0.0],
                [1.0, 0.3, 0.0, 0.0],
            ],
            Family::Nonlinear => [
                [-0.4, -0.2, 0.4, 0.2],
                [0.0, 1.0, 0.0, 0.0],
                [-1.0, 0.0, 1.0, 0.0],
                [0.0, -3.0, 0.0, 1.0],
            ],
        }
    }

    /// Weights under which the source mixture reproduces the target exactly.
    pub fn true_weights(self) -> [f64; 3] {
        match self {
            Family::Linear => [0.0, 0.5, 0.5],
            Family::Nonlinear => [0.4, 0.4, 0.2],
        }
    }

    /// Mean of the target's conditional mean over the post-policy index,
    /// which is uniform on `[0,1]` for every overlap.
    pub fn true_theta(self) -> f64 {
        let c = self.coefficients()[0];
        c[0] + c[1] / 2.0 + c[2] / 3.0 + c[3] / 4.0
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "nonlinear" | "non-linear" => Ok(Family::Nonlinear),
            _ => Err(Error::Config(format!("unknown family '{s}'"))),
        }
    }
}

fn poly(c: &[f64; 4], x: f64) -> f64 {
    c[0] + x * (c[1] + x * (c[2] + x * c[3]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 1000 replications, 999 bootstrap draws.
    Full,
    /// 300 replications, 299 bootstrap draws.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSpec {
    pub family: Family,
    pub overlap: f64,
    pub n0: usize,
    pub sigma_u: f64,
    pub replications: usize,
    /// Zero skips the bootstrap and reports point-estimate accuracy only.
    pub bootstrap_draws: usize,
}

impl McSpec {
    pub fn new(family: Family, n0: usize, overlap: f64, preset: Preset) -> Self {
        let (replications, bootstrap_draws) = match preset {
            Preset::Full => (1000, 999),
            Preset::Reduced => (300, 299),
        };
        Self {
            family,
            overlap,
            n0,
            sigma_u: 0.5,
            replications,
            bootstrap_draws,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return Err(Error::Config(format!(
                "overlap s must lie in (0,1], got {}",
                self.overlap
            )));
        }
        if self.n0 < 10 {
            return Err(Error::Config(format!("n0 must be at least 10, got {}", self.n0)));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::Config("sigma_u must be nonnegative".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.bootstrap_draws == 1 {
            return Err(Error::Config("bootstrap_draws must be 0 or at least 2".into()));
        }
        Ok(())
    }

    /// Policy mapping the target's pre-policy index to `(x - (1-s))/s`.
    pub fn policy(&self) -> PolicySpec {
        let s = self.overlap;
        PolicySpec::IdentityIndex {
            column: 0,
            pre: AffineMap::IDENTITY,
            post: AffineMap {
                scale: 1.0 / s,
                offset: -(1.0 - s) / s,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta0: f64,
    pub w0: [f64; 3],
}

/// One simulated dataset for replication `replication`.
pub fn generate_mc_data(
    spec: &McSpec,
    seed: u64,
    replication: u64,
) -> Result<(MultiRegionDataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = crate::rng::stream(seed, "mc-data", replication);
    let noise = Normal::new(0.0, spec.sigma_u).map_err(|e| Error::Config(e.to_string()))?;
    let coefs = spec.family.coefficients();
    let s = spec.overlap;
    let mut regions = Vec::with_capacity(4);
    for (k, c) in coefs.iter().enumerate() {
        let mut x = Vec::with_capacity(spec.n0);
        let mut y = Vec::with_capacity(spec.n0);
        for _ in 0..spec.n0 {
            let u: f64 = rng.random();
            let xi = if k == 0 { 1.0 - s + s * u } else { u };
            x.push(vec![xi]);
            y.push(poly(c, xi) + noise.sample(&mut rng));
        }
        regions.push(RegionSample::new(k.to_string(), y, x, None)?);
    }
    let target = regions.remove(0);
    let data = MultiRegionDataset::new(vec!["x".into()], target, regions)?;
    Ok((
        data,
        GroundTruth {
            theta0: spec.family.true_theta(),
            w0: spec.family.true_weights(),
        },
    ))
}

/// Left-censored index design: `log W = max(x'gamma + e, log threshold)` with
/// `x ~ N(0, I)` and `e ~ N(0, sigma_e^2)`. The threshold sits at the
/// `censored_share` quantile of the latent outcome, so that share of the
/// sample is censored in expectation.
pub fn censored_index_sample(
    n: usize,
    gamma: &[f64],
    sigma_e: f64,
    censored_share: f64,
    seed: u64,
    replication: u64,
) -> Result<RegionSample> {
    if !(0.0..1.0).contains(&censored_share) {
        return Err(Error::Config(format!(
            "censored share must lie in [0,1), got {censored_share}"
        )));
    }
    let noise = Normal::new(0.0, sigma_e).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = crate::rng::stream(seed, "censored-index", replication);
    let sd = (gamma.iter().map(|g| g * g).sum::<f64>() + sigma_e * sigma_e).sqrt();
    let log_threshold = if censored_share == 0.0 {
        f64::NEG_INFINITY
    } else {
        sd * crate::distributions::normal_quantile(censored_share)
    };
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = gamma.iter().map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let latent: f64 = row.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng);
        y.push(latent.max(log_threshold));
        x.push(row);
    }
    let threshold = if censored_share == 0.0 {
        // keep every observation uncensored
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        (lo - 1.0).exp()
    } else {
        log_threshold.exp()
    };
    RegionSample::new("censored", y, x, Some(threshold))
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_integral(c: &[f64], lo: f64, hi: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(p, v)| v * (hi.powi(p as i32 + 1) - lo.powi(p as i32 + 1)) / (p as f64 + 1.0))
        .sum()
}

/// Population moments with the true response functions: the post-policy
/// index is uniform on `[0,1]` and matched on `[1-s, 1]`.
pub fn population_system(family: Family, overlap: f64) -> Result<MomentSystem> {
    let c = family.coefficients();
    let lo = 1.0 - overlap;
    let h_mat = nalgebra::DMatrix::from_fn(3, 3, |a, b| {
        poly_integral(&poly_mul(&c[a + 1], &c[b + 1]), lo, 1.0)
    });
    let h_vec = nalgebra::DVector::from_fn(3, |a, _| poly_integral(&poly_mul(&c[a + 1], &c[0]), lo, 1.0));
    let target_sq = poly_integral(&poly_mul(&c[0], &c[0]), lo, 1.0);
    MomentSystem::new(h_mat, h_vec, target_sq, usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub theta_hat: f64,
    pub w_hat: Vec<f64>,
    pub w_error: f64,
    pub matched_fraction: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub covered: Option<bool>,
    pub transferability_rejected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub spec: McSpec,
    pub theta0: f64,
    pub w0: [f64; 3],
    pub completed: usize,
    pub failed: usize,
    /// Share of intervals containing `theta0`; empty intervals count as misses.
    pub coverage: Option<f64>,
    /// Mean length over nonempty intervals.
    pub avg_ci_length: Option<f64>,
    pub empty_intervals: usize,
    /// Share of replications where the transferability test rejected.
    pub rejection_rate: Option<f64>,
    pub rmse_theta: f64,
    pub bias_theta: f64,
    pub var_theta: f64,
    /// Square root of the mean Euclidean distance `|w_hat - w0|`, the
    /// statistic tabulated as the weight RMSE in the published designs.
    pub rmse_w: f64,
    /// Textbook root mean squared Euclidean distance.
    pub rms_w_error: f64,
    pub median_w_error: f64,
    pub records: Vec<ReplicationRecord>,
}

fn replicate(
    spec: &McSpec,
    config: &AnalysisConfig,
    r: usize,
) -> Result<ReplicationRecord> {
    let (data, truth) = generate_mc_data(spec, config.master_seed, r as u64)?;
    let policy = spec.policy();
    let opts = FitOptions {
        arf_method: ArfMethod::Polynomial,
        matched_trim: config.matched_trim,
    };
    let est = pipeline::estimate(&data, &policy, &opts)?;
    let w_error = est
        .weights
        .w
        .iter()
        .zip(truth.w0)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut record = ReplicationRecord {
        replication: r,
        theta_hat: est.prediction.theta,
        w_hat: est.weights.w.clone(),
        w_error,
        matched_fraction: est.prediction.matched_fraction,
        lower: None,
        upper: None,
        covered: None,
        transferability_rejected: None,
    };
    if spec.bootstrap_draws >= 2 {
        let mut cfg = config.clone();
        cfg.bootstrap_draws = spec.bootstrap_draws;
        cfg.master_seed = crate::rng::derive_seed(config.master_seed, "mc-inference", r as u64);
        let run = resampling::bootstrap_draws(
            &data,
            |d| pipeline::draw_fit(d, &policy, &opts),
            cfg.bootstrap_draws,
            cfg.master_seed,
        )?;
        let inf = inference::infer_from_bootstrap(est, &run, &cfg, None)?;
        let ci = &inf.report.interval;
        record.lower = ci.lower;
        record.upper = ci.upper;
        record.covered = Some(ci.contains(truth.theta0));
        record.transferability_rejected = Some(inf.report.transferability_rejected);
    }
    Ok(record)
}

/// Replications run in parallel; summaries are computed in replication order
/// so results do not depend on the worker count.
pub fn run_mc(spec: &McSpec, config: &AnalysisConfig) -> Result<McResult> {
    spec.validate()?;
    config.validate()?;
    let outcomes: Vec<Result<ReplicationRecord>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| replicate(spec, config, r))
        .collect();
    let mut records = Vec::with_capacity(spec.replications);
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILED_SHARE * spec.replications as f64 || records.is_empty() {
        return Err(Error::SimulationFailed {
            failed: failures.len(),
            total: spec.replications,
            first: failures.first().map(|f| f.1.clone()).unwrap_or_default(),
        });
    }
    let theta0 = spec.family.true_theta();
    let n = records.len() as f64;
    let mean_theta = records.iter().map(|r| r.theta_hat).sum::<f64>() / n;
    let bias_theta = mean_theta - theta0;
    let var_theta = records.iter().map(|r| (r.theta_hat - mean_theta).powi(2)).sum::<f64>() / n;
    let rmse_theta = (records.iter().map(|r| (r.theta_hat - theta0).powi(2)).sum::<f64>() / n).sqrt();
    let rmse_w = (records.iter().map(|r| r.w_error).sum::<f64>() / n).sqrt();
    let rms_w_error = (records.iter().map(|r| r.w_error.powi(2)).sum::<f64>() / n).sqrt();
    let mut errs: Vec<f64> = records.iter().map(|r| r.w_error).collect();
    errs.sort_by(f64::total_cmp);
    let median_w_error = crate::distributions::quantile_sorted(&errs, 0.5);

    let with_ci: Vec<&ReplicationRecord> = records.iter().filter(|r| r.covered.is_some()).collect();
    let rejection_rate = (!with_ci.is_empty()).then(|| {
        with_ci.iter().filter(|r| r.transferability_rejected == Some(true)).count() as f64
            / with_ci.len() as f64
    });
    let (coverage, avg_ci_length, empty_intervals) = if with_ci.is_empty() {
        (None, None, 0)
    } else {
        let covered = with_ci.iter().filter(|r| r.covered == Some(true)).count();
        let lengths: Vec<f64> = with_ci
            .iter()
            .filter_map(|r| Some(r.upper? - r.lower?))
            .collect();
        let empty = with_ci.len() - lengths.len();
        let avg = (!lengths.is_empty()).then(|| lengths.iter().sum::<f64>() / lengths.len() as f64);
        (Some(covered as f64 / with_ci.len() as f64), avg, empty)
    };
    Ok(McResult {
        spec: *spec,
        theta0,
        w0: spec.family.true_weights(),
        completed: records.len(),
        failed: failures.len(),
        coverage,
        avg_ci_length,
        empty_intervals,
        rejection_rate,
        rmse_theta,
        bias_theta,
        var_theta,
        rmse_w,
        rms_w_error,
        median_w_error,
        records,
    })
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Linear => "linear",
        Family::Nonlinear => "nonlinear",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_table<W: std::io::Write>(header: &[&str], rows: Vec<Vec<String>>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Coverage and average interval length, one row per design.
pub fn write_coverage_csv<W: std::io::Write>(results: &[McResult], writer: W) -> Result<()> {
    let rows = results
        .iter()
        .map(|r| {
            vec![
                family_name(r.spec.family).to_string(),
                r.spec.n0.to_string(),
                r.spec.overlap.to_string(),
                r.spec.replications.to_string(),
                r.spec.bootstrap_draws.to_string(),
                opt(r.coverage),
                opt(r.avg_ci_length),
                r.empty_intervals.to_string(),
                opt(r.rejection_rate),
                r.failed.to_string(),
            ]
        })
        .collect();
    write_table(
        &["family", "n0", "s", "replications", "bootstrap_draws", "coverage", "avg_ci_length", "empty_intervals", "rejection_rate", "failed"],
        rows,
        writer,
    )
}

/// Point-estimate accuracy, one row per design.
pub fn write_accuracy_csv<W: std::io::Write>(results: &[McResult], writer: W) -> Result<()> {
    let rows = results
        .iter()
        .map(|r| {
            vec![
                family_name(r.spec.family).to_string(),
                r.spec.n0.to_string(),
                r.spec.overlap.to_string(),
                r.completed.to_string(),
                r.rmse_w.to_string(),
                r.rms_w_error.to_string(),
                r.rmse_theta.to_string(),
                r.bias_theta.to_string(),
                r.var_theta.to_string(),
            ]
        })
        .collect();
    write_table(
        &["family", "n0", "s", "completed", "rmse_w", "rms_w_error", "rmse_theta", "bias_theta", "var_theta"],
        rows,
        writer,
    )
}

/// Per-replication table.
pub fn write_replications_csv<W: std::io::Write>(result: &McResult, writer: W) -> Result<()> {
    let k = result.w0.len();
    let mut header = vec!["replication".to_string(), "theta_hat".to_string()];
    header.extend((1..=k).map(|j| format!("w{j}")));
    header.extend(["matched_fraction", "lower", "upper", "covered", "rejected"].map(String::from));
    let rows = result
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.replication.to_string(), r.theta_hat.to_string()];
            row.extend(r.w_hat.iter().map(|v| v.to_string()));
            row.push(r.matched_fraction.to_string());
            row.push(opt(r.lower));
            row.push(opt(r.upper));
            row.push(r.covered.map(|c| c.to_string()).unwrap_or_default());
            row.push(r.transferability_rejected.map(|c| c.to_string()).unwrap_or_default());
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&header, rows, writer)
}
