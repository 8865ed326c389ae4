//! Cone-projection test for the weight, its inversion over a simplex grid,
//! and the Bonferroni interval for the prediction.
//!
//! At the population minimizer the first-order residual `f(w)` satisfies
//! `-f(w) in Lambda(w) = {lambda <= 0, lambda'w = 0}`, so the statistic at `w`
//! is the `Omega`-metric distance from `-f_hat(w)` to that cone.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnalysisConfig, MultiRegionDataset, PolicySpec};
use crate::distributions::chi2_quantile;
use crate::error::{Error, Result};
use crate::linalg;
use crate::pipeline::{self, CrossCheck, Estimate, FitOptions};
use crate::prediction::ThetaParts;
use crate::resampling::{self, BootstrapRun, DrawFit, OmegaEstimate, SigmaEstimate};
use crate::weights::{MomentSystem, WeightSolution};

/// Weights at or below this count as zero when forming the cone.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// `Hw - h - (w'(Hw - h)) 1`; satisfies `w'f(w) = 0` on the simplex.
pub fn f_vector(sys: &MomentSystem, w: &DVector<f64>) -> DVector<f64> {
    let r = &sys.h_mat * w - &sys.h_vec;
    let c = w.dot(&r);
    r.map(|v| v - c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeProjection {
    pub lambda: Vec<f64>,
    pub t_value: f64,
    /// Number of zero entries of `lambda`.
    pub df: usize,
    /// True where `lambda` is zero.
    pub active_pattern: Vec<bool>,
}

fn check_metric(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let trace = omega.trace();
    let min_eig = linalg::min_eigenvalue(omega);
    if !(trace > 0.0) || min_eig <= 1e-12 * trace {
        return Err(Error::SingularMetric(format!(
            "bootstrap covariance has min eigenvalue {min_eig:.3e} (trace {trace:.3e})"
        )));
    }
    linalg::spd_inverse(omega)
        .ok_or_else(|| Error::SingularMetric("Cholesky factorization failed".into()))
}

/// `n0 min_{lambda in Lambda(w)} (y - lambda)' Omega^{-1} (y - lambda)`.
pub fn project_cone(
    y: &DVector<f64>,
    omega: &DMatrix<f64>,
    w: &DVector<f64>,
    n0: usize,
) -> Result<ConeProjection> {
    let metric = check_metric(omega)?;
    Ok(project_with_metric(y, &metric, w, n0))
}

/// Exact projection given the inverse metric, by enumerating which
/// zero-weight coordinates carry a strictly negative multiplier.
pub fn project_with_metric(
    y: &DVector<f64>,
    metric: &DMatrix<f64>,
    w: &DVector<f64>,
    n0: usize,
) -> ConeProjection {
    let k = y.len();
    let free: Vec<usize> = (0..k).filter(|&i| w[i] <= ZERO_WEIGHT).collect();
    let scale = 1.0 + y.norm();
    let objective = |lam: &DVector<f64>| {
        let d = y - lam;
        n0 as f64 * d.dot(&(metric * &d))
    };
    let mut best_lambda = DVector::zeros(k);
    let mut best = objective(&best_lambda);
    for mask in 1u32..(1u32 << free.len()) {
        let s: Vec<usize> = (0..free.len())
            .filter(|&j| mask & (1 << j) != 0)
            .map(|j| free[j])
            .collect();
        let rest: Vec<usize> = (0..k).filter(|i| !s.contains(i)).collect();
        let m_ss = linalg::submatrix(metric, &s, &s);
        let m_sr = linalg::submatrix(metric, &s, &rest);
        let rhs = &m_sr * linalg::subvector(y, &rest);
        let Some(shift) = linalg::solve(&m_ss, &rhs) else { continue };
        let lam_s = linalg::subvector(y, &s) + shift;
        if lam_s.iter().any(|&v| v > 1e-12 * scale) {
            continue;
        }
        let mut lam = DVector::zeros(k);
        for (a, &i) in s.iter().enumerate() {
            lam[i] = lam_s[a].min(0.0);
        }
        let val = objective(&lam);
        if val < best {
            best = val;
            best_lambda = lam;
        }
    }
    let tol = 1e-8 * scale;
    let active_pattern: Vec<bool> = best_lambda.iter().map(|v| v.abs() <= tol).collect();
    ConeProjection {
        df: active_pattern.iter().filter(|&&b| b).count(),
        lambda: best_lambda.iter().copied().collect(),
        t_value: best.max(0.0),
        active_pattern,
    }
}

/// Uniform draws on the simplex (sorted uniforms, adjacent gaps) followed by
/// the `k` vertices.
pub fn simplex_grid(k: usize, size: usize, seed: u64) -> Vec<DVector<f64>> {
    if k == 1 {
        return vec![DVector::from_element(1, 1.0)];
    }
    let mut rng = crate::rng::stream(seed, "simplex-grid", 0);
    let mut grid = Vec::with_capacity(size + k);
    let mut u = vec![0.0; k + 1];
    for _ in 0..size {
        u[0] = 0.0;
        u[k] = 1.0;
        for v in u.iter_mut().take(k).skip(1) {
            *v = rng.random::<f64>();
        }
        u[1..k].sort_by(f64::total_cmp);
        grid.push(DVector::from_fn(k, |i, _| u[i + 1] - u[i]));
    }
    for j in 0..k {
        let mut e = DVector::zeros(k);
        e[j] = 1.0;
        grid.push(e);
    }
    grid
}

/// Per-point test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub w: Vec<f64>,
    pub t_value: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfidenceSet {
    pub points: Vec<GridPoint>,
    pub accepted: Vec<bool>,
    pub kappa: f64,
    pub empty: bool,
}

impl WeightConfidenceSet {
    fn from_points(points: Vec<GridPoint>, kappa: f64) -> Self {
        let crit: Vec<f64> = (0..=points.first().map_or(1, |p| p.w.len()))
            .map(|df| if df == 0 { 0.0 } else { chi2_quantile(1.0 - kappa, df) })
            .collect();
        let accepted: Vec<bool> = points.iter().map(|p| p.t_value <= crit[p.df]).collect();
        let empty = !accepted.iter().any(|&a| a);
        Self {
            points,
            accepted,
            kappa,
            empty,
        }
    }

    /// Same statistics tested at another level.
    pub fn at_level(&self, kappa: f64) -> Self {
        Self::from_points(self.points.clone(), kappa)
    }

    pub fn accepted_points(&self) -> impl Iterator<Item = &GridPoint> {
        self.points.iter().zip(&self.accepted).filter(|(_, &a)| a).map(|(p, _)| p)
    }
}

/// Statistic at `w` given the inverse metric.
pub fn cc_statistic(sys: &MomentSystem, metric: &DMatrix<f64>, w: &DVector<f64>) -> GridPoint {
    let proj = project_with_metric(&(-f_vector(sys, w)), metric, w, sys.n0);
    GridPoint {
        w: w.iter().copied().collect(),
        t_value: proj.t_value,
        df: proj.df,
    }
}

/// Inverts the conditional chi-squared test over `grid`.
pub fn weight_confidence_set(
    sys: &MomentSystem,
    omega: &DMatrix<f64>,
    kappa: f64,
    grid: &[DVector<f64>],
) -> Result<WeightConfidenceSet> {
    let metric = check_metric(omega)?;
    let points: Vec<GridPoint> = grid.par_iter().map(|w| cc_statistic(sys, &metric, w)).collect();
    Ok(WeightConfidenceSet::from_points(points, kappa))
}

/// Rejects synthetic transferability when the set at level `alpha` is empty.
pub fn transferability_test(set: &WeightConfidenceSet) -> bool {
    set.empty
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaConfidenceInterval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub alpha: f64,
    pub kappa: f64,
    pub point_estimate: f64,
    pub weight_set_empty: bool,
}

impl ThetaConfidenceInterval {
    pub fn contains(&self, theta: f64) -> bool {
        matches!((self.lower, self.upper), (Some(l), Some(u)) if l <= theta && theta <= u)
    }

    pub fn length(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }
}

/// `sqrt` of the `1 - alpha + kappa` quantile of chi-squared(1).
pub fn bonferroni_z(alpha: f64, kappa: f64) -> f64 {
    chi2_quantile(1.0 - alpha + kappa, 1).sqrt()
}

/// `[min theta(w) - z sigma/sqrt(n0), max theta(w) + z sigma/sqrt(n0)]` over
/// accepted `w`; empty when no point is accepted.
pub fn theta_confidence_interval(
    set: &WeightConfidenceSet,
    theta_fn: impl Fn(&[f64]) -> f64,
    sigma: &SigmaEstimate,
    n0: usize,
    alpha: f64,
    kappa: f64,
    point_estimate: f64,
) -> ThetaConfidenceInterval {
    let half = bonferroni_z(alpha, kappa) * sigma.sigma / (n0 as f64).sqrt();
    let (lo, hi) = set
        .accepted_points()
        .map(|p| theta_fn(&p.w))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    let empty = set.empty;
    ThetaConfidenceInterval {
        lower: (!empty).then_some(lo - half),
        upper: (!empty).then_some(hi + half),
        alpha,
        kappa,
        point_estimate,
        weight_set_empty: empty,
    }
}

/// Weight set and interval with the metric and scale recomputed at every
/// grid point, which does not require an invertible `H`.
pub fn robust_weight_confidence_set(
    sys: &MomentSystem,
    parts: &ThetaParts,
    draws: &[DrawFit],
    grid: &[DVector<f64>],
    config: &AnalysisConfig,
) -> Result<(WeightConfidenceSet, ThetaConfidenceInterval, usize)> {
    let n0 = sys.n0;
    let z = bonferroni_z(config.alpha, config.kappa);
    let evaluated: Vec<Result<(GridPoint, f64, f64, usize)>> = grid
        .par_iter()
        .map(|w| {
            let gammas: Vec<DVector<f64>> = draws
                .iter()
                .map(|d| resampling::gamma_star(&d.system, sys, w))
                .collect();
            let omega = resampling::omega_hat(&gammas, sys, w, config.truncation_constant)?;
            let metric = check_metric(&omega.omega)?;
            let point = cc_statistic(sys, &metric, w);
            let ws = w.as_slice();
            let stars: Vec<f64> = draws.iter().map(|d| d.parts.theta(ws)).collect();
            let theta = parts.theta(ws);
            let sigma = resampling::sigma_hat(&stars, theta, n0)?;
            let half = z * sigma.sigma / (n0 as f64).sqrt();
            Ok((point, theta - half, theta + half, omega.truncation_hits))
        })
        .collect();
    let mut points = Vec::with_capacity(grid.len());
    let mut bounds = Vec::with_capacity(grid.len());
    let mut hits = 0;
    for r in evaluated {
        let (p, lo, hi, h) = r?;
        points.push(p);
        bounds.push((lo, hi));
        hits += h;
    }
    let set = WeightConfidenceSet::from_points(points, config.kappa);
    let (lo, hi) = bounds
        .iter()
        .zip(&set.accepted)
        .filter(|(_, &a)| a)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (&(l, u), _)| (a.min(l), b.max(u)));
    let interval = ThetaConfidenceInterval {
        lower: (!set.empty).then_some(lo),
        upper: (!set.empty).then_some(hi),
        alpha: config.alpha,
        kappa: config.kappa,
        point_estimate: f64::NAN,
        weight_set_empty: set.empty,
    };
    Ok((set, interval, hits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedSummary {
    pub grid_size: usize,
    pub accepted: usize,
    pub empty: bool,
    /// Coordinate-wise range of the accepted weights.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub t_at_w_hat: f64,
    pub df_at_w_hat: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub requested: usize,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub n0: usize,
    pub sources: usize,
    pub robust: bool,
    pub w_hat: Vec<f64>,
    pub theta_hat: f64,
    pub rho_sq: f64,
    pub matched_fraction: f64,
    pub matched_contribution: f64,
    pub unmatched_contribution: f64,
    pub weight_degenerate: bool,
    pub kkt_lambda: Vec<f64>,
    pub h_min_eigenvalue: f64,
    pub omega_min_eigenvalue: Option<f64>,
    pub tau: Option<Vec<f64>>,
    pub truncation_hits: usize,
    pub sigma: Option<SigmaEstimate>,
    pub weight_set: AcceptedSummary,
    pub interval: ThetaConfidenceInterval,
    pub transferability_rejected: bool,
    pub bootstrap: BootstrapSummary,
    pub source_extrapolations: usize,
    pub status_quo_check: Option<CrossCheck>,
}

/// Full inference output, including the grid-level detail omitted from the
/// report.
#[derive(Debug, Clone)]
pub struct Inference {
    pub report: InferenceReport,
    pub estimate: Estimate,
    pub weight_set: WeightConfidenceSet,
}

fn summarize(set: &WeightConfidenceSet, w_hat_index: usize) -> AcceptedSummary {
    let k = set.points[0].w.len();
    let mut lower = vec![f64::INFINITY; k];
    let mut upper = vec![f64::NEG_INFINITY; k];
    let mut accepted = 0;
    for p in set.accepted_points() {
        accepted += 1;
        for j in 0..k {
            lower[j] = lower[j].min(p.w[j]);
            upper[j] = upper[j].max(p.w[j]);
        }
    }
    if accepted == 0 {
        lower.clear();
        upper.clear();
    }
    AcceptedSummary {
        grid_size: set.points.len(),
        accepted,
        empty: set.empty,
        lower,
        upper,
        t_at_w_hat: set.points[w_hat_index].t_value,
        df_at_w_hat: set.points[w_hat_index].df,
    }
}

/// Point estimate, bootstrap, weight set, transferability test and interval.
pub fn infer(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    config: &AnalysisConfig,
) -> Result<Inference> {
    config.validate()?;
    let opts = FitOptions::from(config);
    let est = pipeline::estimate(data, policy, &opts)?;
    let run = resampling::bootstrap_draws(
        data,
        |d| pipeline::draw_fit(d, policy, &opts),
        config.bootstrap_draws,
        config.master_seed,
    )?;
    let status_quo_check = pipeline::status_quo_cross_check(data, policy, &est).ok();
    infer_from_bootstrap(est, &run, config, status_quo_check)
}

/// Inference steps after the bootstrap has run.
pub fn infer_from_bootstrap(
    est: Estimate,
    run: &BootstrapRun,
    config: &AnalysisConfig,
    status_quo_check: Option<CrossCheck>,
) -> Result<Inference> {
    let sys = &est.stage.system;
    let parts = &est.stage.parts;
    let n0 = sys.n0;
    let w_hat = est.weights.w_vec();
    let mut grid = simplex_grid(sys.k(), config.simplex_grid_size, config.master_seed);
    grid.push(w_hat.clone());
    let w_hat_index = grid.len() - 1;
    let draws: Vec<DrawFit> = run.draws.iter().map(|d| d.fit.clone()).collect();

    let (set, interval, hits, omega_info, sigma) = if config.robust_mode {
        let (set, mut interval, hits) =
            robust_weight_confidence_set(sys, parts, &draws, &grid, config)?;
        interval.point_estimate = est.prediction.theta;
        (set, interval, hits, None, None)
    } else {
        let gammas: Vec<DVector<f64>> = draws
            .iter()
            .map(|d| resampling::gamma_star(&d.system, sys, &w_hat))
            .collect();
        let omega: OmegaEstimate =
            resampling::omega_hat(&gammas, sys, &w_hat, config.truncation_constant)?;
        let set = weight_confidence_set(sys, &omega.omega, config.kappa, &grid)?;
        let stars: Vec<f64> = draws.iter().map(|d| d.parts.theta(&est.weights.w)).collect();
        let sigma = resampling::sigma_hat(&stars, est.prediction.theta, n0)?;
        let interval = theta_confidence_interval(
            &set,
            |w| parts.theta(w),
            &sigma,
            n0,
            config.alpha,
            config.kappa,
            est.prediction.theta,
        );
        let min_eig = linalg::min_eigenvalue(&omega.omega);
        (set, interval, omega.truncation_hits, Some((min_eig, omega.tau)), Some(sigma))
    };
    let rejected = transferability_test(&set.at_level(config.alpha));
    let weights: &WeightSolution = &est.weights;
    let report = InferenceReport {
        n0,
        sources: sys.k(),
        robust: config.robust_mode,
        w_hat: weights.w.clone(),
        theta_hat: est.prediction.theta,
        rho_sq: weights.rho_sq,
        matched_fraction: est.prediction.matched_fraction,
        matched_contribution: est.prediction.matched_contribution,
        unmatched_contribution: est.prediction.unmatched_contribution,
        weight_degenerate: weights.degenerate,
        kkt_lambda: weights.lambda.clone(),
        h_min_eigenvalue: sys.min_eigenvalue,
        omega_min_eigenvalue: omega_info.as_ref().map(|o| o.0),
        tau: omega_info.map(|o| o.1),
        truncation_hits: hits,
        sigma,
        weight_set: summarize(&set, w_hat_index),
        interval,
        transferability_rejected: rejected,
        bootstrap: BootstrapSummary {
            requested: run.requested,
            succeeded: run.draws.len(),
            failed: run.failures.len(),
        },
        source_extrapolations: est.stage.extrapolations,
        status_quo_check,
    };
    Ok(Inference {
        report,
        estimate: est,
        weight_set: set,
    })
}
