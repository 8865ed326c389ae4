//! Region-wise bootstrap, the truncated covariance of the bootstrap moment
//! deviations, and the interquartile-range scale of the prediction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiRegionDataset;
use crate::distributions::{normal_iqr, quantile_sorted};
use crate::error::{Error, Result};
use crate::prediction::ThetaParts;
use crate::weights::MomentSystem;

/// Largest tolerated share of failed bootstrap refits.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// What the bootstrap keeps from one refit.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawFit {
    pub system: MomentSystem,
    pub parts: ThetaParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraw {
    pub draw_index: usize,
    pub fit: DrawFit,
}

#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub requested: usize,
    /// Successful draws in draw-index order.
    pub draws: Vec<BootstrapDraw>,
    pub failures: Vec<(usize, String)>,
}

/// `n` indices drawn uniformly with replacement.
pub fn resample_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Resample indices for every region (target first) in draw `b`.
///
/// Each region has its own stream keyed by its identifier, so adding a region
/// leaves the others' resamples unchanged.
pub fn draw_indices(data: &MultiRegionDataset, seed: u64, b: usize) -> Vec<Vec<usize>> {
    data.regions()
        .map(|r| {
            let mut rng = crate::rng::stream(seed, &format!("bootstrap/{}", r.region_id), b as u64);
            resample_indices(r.n(), &mut rng)
        })
        .collect()
}

/// Resampled copy of the dataset for draw `b`.
pub fn resample_dataset(
    data: &MultiRegionDataset,
    seed: u64,
    b: usize,
) -> Result<MultiRegionDataset> {
    let idx = draw_indices(data, seed, b);
    let target = data.target.resample(&idx[0])?;
    let sources = data
        .sources
        .iter()
        .zip(&idx[1..])
        .map(|(r, i)| r.resample(i))
        .collect::<Result<Vec<_>>>()?;
    MultiRegionDataset::new(data.covariate_names.clone(), target, sources)
}

/// Runs `refit` on `b` independent region-wise resamples in parallel.
///
/// Draws that fail are dropped and reported; more than 10% failures abort.
pub fn bootstrap_draws<F>(
    data: &MultiRegionDataset,
    refit: F,
    b: usize,
    seed: u64,
) -> Result<BootstrapRun>
where
    F: Fn(&MultiRegionDataset) -> Result<DrawFit> + Sync,
{
    if b < 2 {
        return Err(Error::InsufficientDraws(format!("B = {b}; at least 2 required")));
    }
    let results: Vec<Result<DrawFit>> = (0..b)
        .into_par_iter()
        .map(|i| resample_dataset(data, seed, i).and_then(|d| refit(&d)))
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(fit) => draws.push(BootstrapDraw { draw_index: i, fit }),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.len() as f64 > MAX_FAILED_SHARE * b as f64 {
        return Err(Error::BootstrapFailed {
            failed: failures.len(),
            total: b,
            first: failures[0].1.clone(),
        });
    }
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "only {} successful draws",
            draws.len()
        )));
    }
    if !failures.is_empty() {
        log::warn!("{} of {b} bootstrap draws failed and were dropped", failures.len());
    }
    Ok(BootstrapRun {
        requested: b,
        draws,
        failures,
    })
}

/// Bootstrap deviation of the concentrated first-order condition at `w`:
/// `sqrt(n0) [dH w - dh - (w' dH 1) 1 + (w' dh) 1]` with `dH = H* - H` and
/// `dh = h* - h`.
pub fn gamma_star(draw: &MomentSystem, base: &MomentSystem, w: &DVector<f64>) -> DVector<f64> {
    let dh_mat = &draw.h_mat - &base.h_mat;
    let dh_vec = &draw.h_vec - &base.h_vec;
    gamma_from_differences(&dh_mat, &dh_vec, w, base.n0)
}

pub fn gamma_from_differences(
    dh_mat: &DMatrix<f64>,
    dh_vec: &DVector<f64>,
    w: &DVector<f64>,
    n0: usize,
) -> DVector<f64> {
    let k = w.len();
    let ones = DVector::repeat(k, 1.0);
    let scalar = w.dot(&(dh_mat * &ones)) - w.dot(dh_vec);
    (dh_mat * w - dh_vec - ones * scalar) * (n0 as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaEstimate {
    pub omega: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub truncation_hits: usize,
    /// All clamped deviations equal, so `omega` is zero.
    pub degenerate: bool,
}

/// Truncation levels `sqrt(n0) max(|[Hw - h]_k|, c0)`.
pub fn truncation_levels(base: &MomentSystem, w: &DVector<f64>, c0: f64) -> Vec<f64> {
    let r = &base.h_mat * w - &base.h_vec;
    let root = (base.n0 as f64).sqrt();
    r.iter().map(|v| root * v.abs().max(c0)).collect()
}

/// Centered second moment of the clamped deviations.
pub fn omega_from_gammas(gammas: &[DVector<f64>], tau: &[f64]) -> Result<OmegaEstimate> {
    let b = gammas.len();
    if b < 2 {
        return Err(Error::InsufficientDraws(format!("{b} draws; at least 2 required")));
    }
    let k = tau.len();
    let mut hits = 0;
    let mut sum = DVector::zeros(k);
    let mut outer = DMatrix::zeros(k, k);
    let mut first: Option<DVector<f64>> = None;
    let mut all_equal = true;
    for g in gammas {
        let clamped = DVector::from_fn(k, |j, _| {
            let v = g[j];
            if v > tau[j] {
                hits += 1;
                tau[j]
            } else if v < -tau[j] {
                hits += 1;
                -tau[j]
            } else {
                v
            }
        });
        match &first {
            None => first = Some(clamped.clone()),
            Some(f) => all_equal &= *f == clamped,
        }
        sum += &clamped;
        outer += &clamped * clamped.transpose();
    }
    let bf = b as f64;
    let mean = sum / bf;
    let omega = if all_equal {
        DMatrix::zeros(k, k)
    } else {
        crate::linalg::symmetrize(&(outer / bf - &mean * mean.transpose()))
    };
    Ok(OmegaEstimate {
        omega,
        tau: tau.to_vec(),
        truncation_hits: hits,
        degenerate: all_equal,
    })
}

/// Truncated bootstrap covariance of the deviations at `w`.
pub fn omega_hat(
    gammas: &[DVector<f64>],
    base: &MomentSystem,
    w: &DVector<f64>,
    c0: f64,
) -> Result<OmegaEstimate> {
    omega_from_gammas(gammas, &truncation_levels(base, w, c0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Interquartile-range scale of `T* = sqrt(n0)(theta* - theta)`, normalized
/// by the standard normal interquartile range.
pub fn sigma_hat(theta_stars: &[f64], theta_hat: f64, n0: usize) -> Result<SigmaEstimate> {
    if theta_stars.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "{} bootstrap predictions",
            theta_stars.len()
        )));
    }
    let root = (n0 as f64).sqrt();
    let mut t: Vec<f64> = theta_stars.iter().map(|v| root * (v - theta_hat)).collect();
    t.sort_by(f64::total_cmp);
    let q25 = quantile_sorted(&t, 0.25);
    let q75 = quantile_sorted(&t, 0.75);
    let sigma = (q75 - q25) / normal_iqr();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateScale(format!(
            "bootstrap interquartile range is {}",
            q75 - q25
        )));
    }
    Ok(SigmaEstimate { sigma, q25, q75 })
}
