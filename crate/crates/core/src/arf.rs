//! Policy indices, average response functions and the matched group.
//!
//! A region's average response function (ARF) is the conditional mean of the
//! outcome given the scalar policy index. Two estimators are provided: OLS on
//! a cubic basis in the index and Nadaraya-Watson with a quartic kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ArfMethod, PolicySpec, RegionSample};
use crate::error::{Error, Result};

/// Linear index coefficients for threshold-type policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexModel {
    pub gamma: Vec<f64>,
    /// `log` of the region's own threshold.
    pub threshold_log: f64,
}

impl IndexModel {
    pub fn linear(&self, x: &[f64]) -> f64 {
        self.gamma.iter().zip(x).map(|(g, v)| g * v).sum()
    }

    /// Pre-policy index `x'gamma - log threshold`.
    pub fn index(&self, x: &[f64]) -> f64 {
        self.linear(x) - self.threshold_log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelArf {
    /// Training index values, sorted ascending.
    mu: Vec<f64>,
    y: Vec<f64>,
    pub bandwidth: f64,
    pub cv_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArfModel {
    Polynomial {
        /// Coefficients on `[1, mu, mu^2, mu^3]`.
        coefficients: [f64; 4],
        support: (f64, f64),
    },
    Kernel {
        #[serde(flatten)]
        fit: KernelArf,
        support: (f64, f64),
    },
}

/// Fitted value plus whether `mu` lies outside the training support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArfValue {
    pub value: f64,
    pub extrapolated: bool,
}

impl ArfModel {
    pub fn support(&self) -> (f64, f64) {
        match self {
            ArfModel::Polynomial { support, .. } | ArfModel::Kernel { support, .. } => *support,
        }
    }
}

fn support_of(index: &[f64]) -> (f64, f64) {
    index
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)))
}

fn check_index(sample: &RegionSample, index: &[f64]) -> Result<()> {
    if index.len() != sample.n() {
        return Err(Error::Dimension(format!(
            "region {}: {} index values for {} observations",
            sample.region_id,
            index.len(),
            sample.n()
        )));
    }
    if index.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite(format!(
            "region {}: policy index is not finite",
            sample.region_id
        )));
    }
    Ok(())
}

pub fn fit_arf(method: ArfMethod, sample: &RegionSample, index: &[f64]) -> Result<ArfModel> {
    match method {
        ArfMethod::Polynomial => fit_polynomial_arf(sample, index),
        ArfMethod::Kernel => fit_kernel_arf(sample, index),
    }
}

/// Least squares of the outcome on `[1, mu, mu^2, mu^3]`.
pub fn fit_polynomial_arf(sample: &RegionSample, index: &[f64]) -> Result<ArfModel> {
    check_index(sample, index)?;
    let n = sample.n();
    if n <= 4 {
        return Err(Error::SingularFit(format!(
            "region {}: cubic fit needs more than 4 observations, got {n}",
            sample.region_id
        )));
    }
    let mut design = DMatrix::from_fn(n, 4, |i, j| index[i].powi(j as i32));
    // unit-norm columns keep the rank test scale free
    let mut norms = [0.0; 4];
    for (j, norm) in norms.iter_mut().enumerate() {
        *norm = design.column(j).norm();
        if *norm == 0.0 {
            return Err(Error::SingularFit(format!(
                "region {}: index is identically zero",
                sample.region_id
            )));
        }
        design.column_mut(j).scale_mut(1.0 / *norm);
    }
    let qr = design.qr();
    let r = qr.r();
    let rmax = (0..4).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..4).any(|j| r[(j, j)].abs() <= 1e-10 * rmax) {
        return Err(Error::SingularFit(format!(
            "region {}: cubic design is rank deficient",
            sample.region_id
        )));
    }
    let qty = qr.q().transpose() * DVector::from_column_slice(&sample.outcomes);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularFit("triangular solve failed".into()))?;
    let mut coefficients = [0.0; 4];
    for j in 0..4 {
        coefficients[j] = beta[j] / norms[j];
    }
    Ok(ArfModel::Polynomial {
        coefficients,
        support: support_of(index),
    })
}

/// Quartic (biweight) kernel `(15/16)(1-u^2)^2` on `|u| <= 1`.
pub fn quartic_kernel(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        let v = 1.0 - u * u;
        0.9375 * v * v
    } else {
        0.0
    }
}

/// Log-spaced candidate bandwidths from `0.1 sd n^(-1/5)` to `3 sd`.
pub fn bandwidth_grid(index: &[f64]) -> Vec<f64> {
    let n = index.len() as f64;
    let mean = index.iter().sum::<f64>() / n;
    let sd = (index.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let lo = (0.1 * sd * n.powf(-0.2)).ln();
    let hi = (3.0 * sd).ln();
    (0..30)
        .map(|i| (lo + (hi - lo) * i as f64 / 29.0).exp())
        .collect()
}

impl KernelArf {
    /// Kernel-weighted mean over training points in `[mu - h, mu + h]`,
    /// skipping position `skip`. `None` when the window carries no weight.
    fn window_mean(&self, mu: f64, h: f64, skip: Option<usize>) -> Option<f64> {
        let start = self.mu.partition_point(|&m| m < mu - h);
        let end = self.mu.partition_point(|&m| m <= mu + h);
        let (mut num, mut den) = (0.0, 0.0);
        for j in start..end {
            if Some(j) == skip {
                continue;
            }
            let k = quartic_kernel((self.mu[j] - mu) / h);
            num += k * self.y[j];
            den += k;
        }
        (den > 0.0).then(|| num / den)
    }

    /// Normalized kernel weights over all training points at `mu`.
    pub fn weights_at(&self, mu: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .mu
            .iter()
            .map(|&m| quartic_kernel((m - mu) / self.bandwidth))
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.into_iter().map(|k| k / total).collect()
        } else {
            raw
        }
    }

    fn loo_cv(&self, h: f64) -> f64 {
        let mut sse = 0.0;
        for i in 0..self.mu.len() {
            match self.window_mean(self.mu[i], h, Some(i)) {
                Some(pred) => sse += (self.y[i] - pred).powi(2),
                None => return f64::INFINITY,
            }
        }
        sse / self.mu.len() as f64
    }
}

/// Nadaraya-Watson regression with a leave-one-out cross-validated bandwidth.
///
/// Bandwidths whose leave-one-out window is empty somewhere score infinity;
/// if every candidate does, the largest is used.
pub fn fit_kernel_arf(sample: &RegionSample, index: &[f64]) -> Result<ArfModel> {
    check_index(sample, index)?;
    let n = sample.n();
    if n < 10 {
        return Err(Error::DegenerateDesign(format!(
            "region {}: kernel fit needs at least 10 observations, got {n}",
            sample.region_id
        )));
    }
    let support = support_of(index);
    if support.0 == support.1 {
        return Err(Error::DegenerateDesign(format!(
            "region {}: all index values are identical",
            sample.region_id
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| index[a].total_cmp(&index[b]).then(a.cmp(&b)));
    let mut fit = KernelArf {
        mu: order.iter().map(|&i| index[i]).collect(),
        y: order.iter().map(|&i| sample.outcomes[i]).collect(),
        bandwidth: f64::NAN,
        cv_score: f64::INFINITY,
    };
    let grid = bandwidth_grid(index);
    let mut best = (f64::INFINITY, *grid.last().unwrap());
    for &h in &grid {
        let cv = fit.loo_cv(h);
        if cv < best.0 {
            best = (cv, h);
        }
    }
    fit.cv_score = best.0;
    fit.bandwidth = best.1;
    Ok(ArfModel::Kernel { fit, support })
}

/// Kernel ARF with a fixed bandwidth, bypassing cross-validation.
pub fn kernel_arf_with_bandwidth(index: &[f64], outcomes: &[f64], bandwidth: f64) -> Result<ArfModel> {
    if !(bandwidth > 0.0) || index.len() != outcomes.len() || index.is_empty() {
        return Err(Error::DegenerateDesign("invalid kernel inputs".into()));
    }
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| index[a].total_cmp(&index[b]).then(a.cmp(&b)));
    Ok(ArfModel::Kernel {
        fit: KernelArf {
            mu: order.iter().map(|&i| index[i]).collect(),
            y: order.iter().map(|&i| outcomes[i]).collect(),
            bandwidth,
            cv_score: f64::NAN,
        },
        support: support_of(index),
    })
}

/// Fitted ARF at `mu`. Kernel models use every training point.
pub fn evaluate_arf(model: &ArfModel, mu: f64) -> Result<ArfValue> {
    let (lo, hi) = model.support();
    let extrapolated = mu < lo || mu > hi;
    let value = match model {
        ArfModel::Polynomial { coefficients: c, .. } => c[0] + mu * (c[1] + mu * (c[2] + mu * c[3])),
        ArfModel::Kernel { fit, .. } => fit.window_mean(mu, fit.bandwidth, None).ok_or(
            Error::EmptyWindow {
                mu,
                nearest: if (mu - lo).abs() <= (mu - hi).abs() { lo } else { hi },
            },
        )?,
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("ARF value at mu = {mu}")));
    }
    Ok(ArfValue {
        value,
        extrapolated,
    })
}

/// Loss for one pair in the pairwise-difference censored regression.
///
/// Convex and continuously differentiable in `delta`; the middle branch is the
/// squared pairwise residual.
pub fn pairwise_loss(y1: f64, y2: f64, delta: f64) -> f64 {
    if delta <= -y2 {
        y1 * y1 - 2.0 * (y2 + delta) * y1
    } else if delta < y1 {
        (y1 - y2 - delta).powi(2)
    } else {
        y2 * y2 + 2.0 * (delta - y1) * y2
    }
}

/// Outcome measured above the censoring point, floored at zero.
pub fn censored_outcome(sample: &RegionSample) -> Result<Vec<f64>> {
    let log_thr = sample
        .threshold
        .ok_or_else(|| {
            Error::Validation(format!("region {} has no threshold", sample.region_id))
        })?
        .ln();
    let raw = sample.index_outcome.as_ref().unwrap_or(&sample.outcomes);
    Ok(raw.iter().map(|v| (v - log_thr).max(0.0)).collect())
}

/// Pair-averaged censored regression objective at `gamma`.
pub fn censored_objective(y: &[f64], rows: &[&[f64]], gamma: &[f64]) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(gamma).map(|(a, b)| a * b).sum())
        .collect();
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += pairwise_loss(y[i], y[j], v[i] - v[j]);
        }
    }
    total / (n as f64 * (n as f64 - 1.0))
}

/// Branch-free form of [`pairwise_loss`] for `y1, y2 >= 0`: with
/// `c = clamp(delta, -y2, y1)` and `r = y1 - y2 - c`, the loss is
/// `r^2 + 2 (c - delta) r` and its derivative in `delta` is `-2 r`.
/// Returns `(loss, r, middle)` where `middle` is 1 on the quadratic branch.
#[inline(always)]
fn fused_loss(y1: f64, y2: f64, delta: f64) -> (f64, f64, f64) {
    let c = delta.max(-y2).min(y1);
    let r = y1 - y2 - c;
    let middle = if c == delta { 1.0 } else { 0.0 };
    (r * r + 2.0 * (c - delta) * r, r, middle)
}

struct PairwiseProblem<'a> {
    y: &'a [f64],
    /// Column-major covariates.
    cols: Vec<Vec<f64>>,
    d: usize,
    scale: f64,
}

impl PairwiseProblem<'_> {
    fn index(&self, gamma: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.y.len()];
        for (col, g) in self.cols.iter().zip(gamma) {
            for (vi, x) in v.iter_mut().zip(col) {
                *vi += g * x;
            }
        }
        v
    }

    fn value(&self, gamma: &[f64]) -> f64 {
        let v = self.index(gamma);
        let n = self.y.len();
        let mut total = 0.0;
        for i in 0..n {
            let (yi, vi) = (self.y[i], v[i]);
            let mut row = 0.0;
            for (yj, vj) in self.y[i + 1..].iter().zip(&v[i + 1..]) {
                row += fused_loss(yi, *yj, vi - vj).0;
            }
            total += row;
        }
        total * self.scale
    }

    /// Objective, gradient and generalized Hessian in one pass.
    ///
    /// For fixed `i` the sums over `j` are accumulated as moments of `x_j`
    /// weighted by the loss slope and the quadratic-branch indicator, then
    /// expanded around `x_i`.
    fn derivatives(&self, gamma: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.d;
        let v = self.index(gamma);
        let n = self.y.len();
        let mut f = 0.0;
        let mut g = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut sx = vec![0.0; d];
        let mut mx = vec![0.0; d];
        let mut mxx = vec![0.0; d * d];
        let mut slope = vec![0.0; n];
        let mut mid = vec![0.0; n];
        for i in 0..n {
            let (yi, vi) = (self.y[i], v[i]);
            let mut f_row = 0.0;
            let (mut s_sum, mut m_sum) = (0.0, 0.0);
            for j in (i + 1)..n {
                let (l, r, m) = fused_loss(yi, self.y[j], vi - v[j]);
                f_row += l;
                // derivative in delta is -2r
                slope[j] = -2.0 * r;
                mid[j] = m;
                s_sum += slope[j];
                m_sum += m;
            }
            f += f_row;
            for a in 0..d {
                let ca = &self.cols[a][i + 1..];
                sx[a] = slope[i + 1..].iter().zip(ca).map(|(s, x)| s * x).sum();
                mx[a] = mid[i + 1..].iter().zip(ca).map(|(m, x)| m * x).sum();
                for b in a..d {
                    let cb = &self.cols[b][i + 1..];
                    mxx[a * d + b] = mid[i + 1..]
                        .iter()
                        .zip(ca)
                        .zip(cb)
                        .map(|((m, xa), xb)| m * xa * xb)
                        .sum();
                }
            }
            for a in 0..d {
                let xa = self.cols[a][i];
                g[a] += s_sum * xa - sx[a];
                for b in a..d {
                    let xb = self.cols[b][i];
                    hess[a * d + b] += 2.0
                        * (m_sum * xa * xb - xa * mx[b] - mx[a] * xb + mxx[a * d + b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                hess[a * d + b] = hess[b * d + a];
            }
        }
        let s = self.scale;
        (
            f * s,
            DVector::from_vec(g) * s,
            DMatrix::from_row_slice(d, d, &hess) * s,
        )
    }

    /// Damped Newton with Armijo backtracking. The full step is tried with
    /// a derivative pass so an accepted step costs one pass over the pairs.
    fn minimize(&self, start: &[f64]) -> (Vec<f64>, f64) {
        let d = self.d;
        let mut gamma = DVector::from_column_slice(start);
        let (mut f, mut g, mut hess) = self.derivatives(gamma.as_slice());
        for _ in 0..200 {
            let gnorm = g.norm();
            if gnorm <= 1e-12 {
                break;
            }
            let ridge = 1e-10 * (1.0 + hess.diagonal().abs().max());
            let shifted = &hess + DMatrix::identity(d, d) * ridge;
            let mut dir = shifted.cholesky().map(|c| c.solve(&(-&g))).unwrap_or_else(|| -&g);
            if dir.dot(&g) >= 0.0 {
                dir = -&g;
            }
            let slope = dir.dot(&g);
            let full = &gamma + &dir;
            let (f_full, g_full, h_full) = self.derivatives(full.as_slice());
            let f_old = f;
            let next = if f_full <= f + 1e-4 * slope {
                (f, g, hess) = (f_full, g_full, h_full);
                full
            } else {
                let mut t = 0.5;
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = &gamma + &dir * t;
                    if self.value(cand.as_slice()) <= f + 1e-4 * t * slope {
                        accepted = Some(cand);
                        break;
                    }
                    t *= 0.5;
                }
                let Some(cand) = accepted else { break };
                (f, g, hess) = self.derivatives(cand.as_slice());
                cand
            };
            let step = (&next - &gamma).norm();
            gamma = next;
            if step <= 1e-12 * (1.0 + gamma.norm()) || (f_old - f).abs() <= 1e-15 * (1.0 + f.abs())
            {
                break;
            }
        }
        (gamma.as_slice().to_vec(), f)
    }
}

/// Pairwise-difference estimator of the index slope for an outcome censored
/// from below at the region threshold.
///
/// Uses the index outcome column when present, else the outcome itself, both
/// on the log scale. Five starts: zero and four perturbations of the pairwise
/// least-squares slope; the lowest objective wins.
pub fn fit_censored_index(sample: &RegionSample) -> Result<IndexModel> {
    let d = sample.dim();
    if d == 0 {
        return Err(Error::Validation(format!(
            "region {}: the index needs at least one covariate",
            sample.region_id
        )));
    }
    let y = censored_outcome(sample)?;
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::NoIdentification(format!(
            "region {}: every observation is censored",
            sample.region_id
        )));
    }
    let n = sample.n() as f64;
    let problem = PairwiseProblem {
        y: &y,
        cols: (0..d).map(|j| sample.covariate_column(j)).collect(),
        d,
        scale: 1.0 / (n * (n - 1.0)),
    };
    let ols = pairwise_ols(sample, &y);
    let mut starts = vec![vec![0.0; d]];
    for (t, sign) in [(0.25, 1.0), (0.25, -1.0), (0.5, 1.0), (0.5, -1.0)] {
        starts.push(
            ols.iter()
                .enumerate()
                .map(|(j, b)| {
                    let alt = if j % 2 == 0 { sign } else { -sign };
                    b + alt * t * (b.abs() + 0.1)
                })
                .collect(),
        );
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let (gamma, f) = problem.minimize(s);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((gamma, f));
        }
    }
    let (gamma, _) = best.unwrap();
    if gamma.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("censored index coefficients".into()));
    }
    Ok(IndexModel {
        gamma,
        threshold_log: sample.threshold.unwrap().ln(),
    })
}

/// Slope of OLS with an intercept, which equals the pairwise-difference
/// least-squares slope. Falls back to zeros when singular.
fn pairwise_ols(sample: &RegionSample, y: &[f64]) -> Vec<f64> {
    let n = sample.n();
    let d = sample.dim();
    let x = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { sample.row(i)[j - 1] });
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    match crate::linalg::solve(&xtx, &xty) {
        Some(b) => b.iter().skip(1).copied().collect(),
        None => vec![0.0; d],
    }
}

/// Target observations whose post-policy index falls inside the pre-policy
/// support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedGroup {
    pub indicator: Vec<bool>,
    pub pre_policy_support: (f64, f64),
    pub matched_fraction: f64,
}

impl MatchedGroup {
    pub fn n_matched(&self) -> usize {
        self.indicator.iter().filter(|&&m| m).count()
    }

    /// Restriction to the positions in `idx`, keeping the support.
    pub fn subset(&self, idx: &[usize]) -> MatchedGroup {
        let indicator: Vec<bool> = idx.iter().map(|&i| self.indicator[i]).collect();
        let m = indicator.iter().filter(|&&b| b).count();
        MatchedGroup {
            matched_fraction: if idx.is_empty() { 0.0 } else { m as f64 / idx.len() as f64 },
            indicator,
            pre_policy_support: self.pre_policy_support,
        }
    }
}

/// Matched indicator from pre- and post-policy index values; the support is
/// widened by `trim` on both sides.
pub fn matched_group_from_indices(pre: &[f64], post: &[f64], trim: f64) -> MatchedGroup {
    let (lo, hi) = support_of(pre);
    let indicator: Vec<bool> = post
        .iter()
        .map(|&m| m >= lo - trim && m <= hi + trim)
        .collect();
    let matched = indicator.iter().filter(|&&b| b).count();
    MatchedGroup {
        matched_fraction: if post.is_empty() { 0.0 } else { matched as f64 / post.len() as f64 },
        indicator,
        pre_policy_support: (lo, hi),
    }
}

pub fn matched_group(
    target: &RegionSample,
    policy: &PolicySpec,
    index0: Option<&IndexModel>,
    trim: f64,
) -> Result<MatchedGroup> {
    let pre = pre_policy_index(target, policy, index0)?;
    let post = post_policy_index(target, policy, index0)?;
    Ok(matched_group_from_indices(&pre, &post, trim))
}

fn require_index<'a>(index: Option<&'a IndexModel>) -> Result<&'a IndexModel> {
    index.ok_or_else(|| Error::Validation("threshold policy needs a fitted index model".into()))
}

fn in_selection(x: &[f64], selection: &[crate::dataset::ColumnBound]) -> bool {
    selection
        .iter()
        .all(|b| x[b.column] >= b.lower && x[b.column] <= b.upper)
}

/// Pre-policy index of every observation in `sample` under the index
/// function of the region that owns `index`.
pub fn pre_policy_index(
    sample: &RegionSample,
    policy: &PolicySpec,
    index: Option<&IndexModel>,
) -> Result<Vec<f64>> {
    Ok(match policy {
        PolicySpec::IndexThreshold { .. } => {
            let m = require_index(index)?;
            sample.rows().map(|x| m.index(x)).collect()
        }
        PolicySpec::CovariateShift { loading, .. } => sample
            .rows()
            .map(|x| loading.iter().zip(x).map(|(c, v)| c * v).sum())
            .collect(),
        PolicySpec::IdentityIndex { column, pre, .. } => {
            sample.rows().map(|x| pre.apply(x[*column])).collect()
        }
    })
}

/// Post-policy index at the covariates in `sample` under the index function
/// of the region that owns `index`.
pub fn post_policy_index(
    sample: &RegionSample,
    policy: &PolicySpec,
    index: Option<&IndexModel>,
) -> Result<Vec<f64>> {
    Ok(match policy {
        PolicySpec::IndexThreshold {
            counterfactual_threshold,
        } => {
            let m = require_index(index)?;
            let log_cf = counterfactual_threshold.ln();
            sample.rows().map(|x| m.linear(x) - log_cf).collect()
        }
        PolicySpec::CovariateShift {
            loading,
            shift,
            selection,
        } => sample
            .rows()
            .map(|x| {
                let moved = in_selection(x, selection);
                loading
                    .iter()
                    .zip(x)
                    .zip(shift)
                    .map(|((c, v), s)| c * (v + if moved { *s } else { 0.0 }))
                    .sum()
            })
            .collect(),
        PolicySpec::IdentityIndex { column, post, .. } => {
            sample.rows().map(|x| post.apply(x[*column])).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AffineMap;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn sample_xy(x: &[f64], y: &[f64]) -> RegionSample {
        RegionSample::new("r", y.to_vec(), x.iter().map(|&v| vec![v]).collect(), Some(1.0)).unwrap()
    }

    fn coefs(m: &ArfModel) -> [f64; 4] {
        match m {
            ArfModel::Polynomial { coefficients, .. } => *coefficients,
            _ => panic!("not polynomial"),
        }
    }

    #[test]
    fn polynomial_linear_outcome() {
        let mu: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y: Vec<f64> = mu.iter().map(|m| 0.4 * m).collect();
        let c = coefs(&fit_polynomial_arf(&sample_xy(&mu, &y), &mu).unwrap());
        for (got, want) in c.iter().zip([0.0, 0.4, 0.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn polynomial_constant_outcome() {
        let mu: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let c = coefs(&fit_polynomial_arf(&sample_xy(&mu, &[3.0; 20]), &mu).unwrap());
        for (got, want) in c.iter().zip([3.0, 0.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn polynomial_evaluates() {
        let m = ArfModel::Polynomial {
            coefficients: [0.0, 0.4, 0.0, 0.0],
            support: (0.0, 1.0),
        };
        let v = evaluate_arf(&m, 0.5).unwrap();
        assert_abs_diff_eq!(v.value, 0.2, epsilon = 1e-15);
        assert!(!v.extrapolated);
        assert!(evaluate_arf(&m, 1.5).unwrap().extrapolated);
    }

    #[test]
    fn polynomial_rank_deficient() {
        let mu = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let err = fit_polynomial_arf(&sample_xy(&mu, &[1.0; 6]), &mu).unwrap_err();
        assert!(matches!(err, Error::SingularFit(_)));
        let mu = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            fit_polynomial_arf(&sample_xy(&mu, &[1.0; 4]), &mu),
            Err(Error::SingularFit(_))
        ));
    }

    #[test]
    fn polynomial_noisy_cubic_matches_normal_equations() {
        let mut rng = crate::rng::stream(11, "cubic", 0);
        let n = 100_000;
        let truth = [0.3, -1.0, 0.5, 2.0];
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = mu
            .iter()
            .map(|m| truth[0] + truth[1] * m + truth[2] * m * m + truth[3] * m.powi(3) + noise.sample(&mut rng))
            .collect();
        let c = coefs(&fit_polynomial_arf(&sample_xy(&mu, &y), &mu).unwrap());
        // normal equations solved independently
        let mut xtx = [[0.0f64; 4]; 4];
        let mut xty = [0.0f64; 4];
        for (m, v) in mu.iter().zip(&y) {
            let b = [1.0, *m, m * m, m * m * m];
            for a in 0..4 {
                xty[a] += b[a] * v;
                for c2 in 0..4 {
                    xtx[a][c2] += b[a] * b[c2];
                }
            }
        }
        let a = DMatrix::from_fn(4, 4, |i, j| xtx[i][j]);
        let ne = a.lu().solve(&DVector::from_row_slice(&xty)).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(c[j], ne[j], epsilon = 1e-6);
        }
        // low-order coefficients are well determined at this sample size
        assert_abs_diff_eq!(c[0], truth[0], epsilon = 0.02);
    }

    #[test]
    fn polynomial_residuals_orthogonal() {
        let mu: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).cos() * 2.0).collect();
        let y: Vec<f64> = mu.iter().map(|m| (3.0 * m).sin()).collect();
        let model = fit_polynomial_arf(&sample_xy(&mu, &y), &mu).unwrap();
        for p in 0..4 {
            let dot: f64 = mu
                .iter()
                .zip(&y)
                .map(|(m, v)| (v - evaluate_arf(&model, *m).unwrap().value) * m.powi(p))
                .sum();
            assert!(dot.abs() < 1e-10, "basis {p}: {dot}");
        }
    }

    #[test]
    fn kernel_constant_outcome() {
        let mu: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let model = fit_kernel_arf(&sample_xy(&mu, &[2.5; 30]), &mu).unwrap();
        for m in [0.0, 0.33, 0.5, 1.0] {
            assert_abs_diff_eq!(evaluate_arf(&model, m).unwrap().value, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_recovers_linear_mean() {
        let mut rng = crate::rng::stream(3, "kernel", 0);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mu: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = mu.iter().map(|m| m + noise.sample(&mut rng)).collect();
        let model = fit_kernel_arf(&sample_xy(&mu, &y), &mu).unwrap();
        let v = evaluate_arf(&model, 0.5).unwrap().value;
        assert!((v - 0.5).abs() <= 0.02, "{v}");
    }

    #[test]
    fn kernel_degenerate_and_empty_window() {
        let mu = [1.0; 12];
        assert!(matches!(
            fit_kernel_arf(&sample_xy(&mu, &[0.0; 12]), &mu),
            Err(Error::DegenerateDesign(_))
        ));
        let model = kernel_arf_with_bandwidth(&[0.0, 1.0], &[1.0, 2.0], 0.1).unwrap();
        match evaluate_arf(&model, 5.0) {
            Err(Error::EmptyWindow { nearest, .. }) => assert_eq!(nearest, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kernel_tiny_bandwidth_averages_ties() {
        let model =
            kernel_arf_with_bandwidth(&[0.0, 0.5, 0.5, 1.0], &[9.0, 1.0, 3.0, 9.0], 1e-6).unwrap();
        assert_abs_diff_eq!(evaluate_arf(&model, 0.5).unwrap().value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kernel_weights_sum_to_one() {
        let model = kernel_arf_with_bandwidth(&[0.0, 0.2, 0.3, 0.9], &[1.0; 4], 0.35).unwrap();
        let ArfModel::Kernel { fit, .. } = &model else { unreachable!() };
        let w = fit.weights_at(0.25);
        assert!(w.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_loss_is_continuous() {
        for &(y1, y2) in &[(1.0, 0.5), (0.0, 2.0), (0.3, 0.0)] {
            for edge in [-y2, y1] {
                let a = pairwise_loss(y1, y2, edge - 1e-9);
                let b = pairwise_loss(y1, y2, edge + 1e-9);
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    fn pairwise_loss_d1(y1: f64, y2: f64, delta: f64) -> (f64, bool) {
        if delta <= -y2 {
            (-2.0 * y1, false)
        } else if delta < y1 {
            (-2.0 * (y1 - y2 - delta), true)
        } else {
            (2.0 * y2, false)
        }
    }

    #[test]
    fn fused_loss_matches_three_branches() {
        for &(y1, y2) in &[(1.0, 0.5), (0.0, 2.0), (0.3, 0.0), (0.0, 0.0), (2.0, 2.0)] {
            for k in -40..=40 {
                let delta = k as f64 * 0.1;
                let (l, r, _) = fused_loss(y1, y2, delta);
                assert_abs_diff_eq!(l, pairwise_loss(y1, y2, delta), epsilon = 1e-12);
                assert_abs_diff_eq!(-2.0 * r, pairwise_loss_d1(y1, y2, delta).0, epsilon = 1e-12);
            }
        }
    }

    fn censored_sample(x: &[[f64; 2]], logw: &[f64], thr: f64) -> RegionSample {
        RegionSample::new("c", logw.to_vec(), x.iter().map(|r| r.to_vec()).collect(), Some(thr)).unwrap()
    }

    #[test]
    fn censored_index_exact_without_censoring() {
        let gamma = [1.0, -0.5];
        let x: Vec<[f64; 2]> = (0..60)
            .map(|i| [(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let logw: Vec<f64> = x.iter().map(|r| r[0] * gamma[0] + r[1] * gamma[1] + 5.0).collect();
        let m = fit_censored_index(&censored_sample(&x, &logw, 1.0)).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(m.gamma[j], gamma[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn censored_index_symmetric_zero() {
        // X and -X paired with identical outcomes
        let mut x = Vec::new();
        let mut logw = Vec::new();
        for i in 0..20 {
            let r = [(i as f64 * 0.9).sin(), (i as f64 * 0.4).cos()];
            let v = 1.0 + (i % 3) as f64 * 0.2;
            x.push(r);
            logw.push(v);
            x.push([-r[0], -r[1]]);
            logw.push(v);
        }
        let m = fit_censored_index(&censored_sample(&x, &logw, 1.0)).unwrap();
        assert!(m.gamma.iter().map(|g| g * g).sum::<f64>().sqrt() <= 1e-6, "{:?}", m.gamma);
    }

    #[test]
    fn censored_index_all_censored() {
        let x = [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        let err = fit_censored_index(&censored_sample(&x, &[0.0, -1.0, 0.0], 1.0)).unwrap_err();
        assert!(matches!(err, Error::NoIdentification(_)));
    }

    #[test]
    fn censored_objective_shift_invariant() {
        let x: Vec<[f64; 2]> = (0..15).map(|i| [i as f64 * 0.1, (i as f64).sin()]).collect();
        let logw: Vec<f64> = (0..15).map(|i| 0.5 + (i as f64 * 0.77).cos()).collect();
        let a = censored_sample(&x, &logw, 1.2);
        let shifted: Vec<f64> = logw.iter().map(|v| v + 0.7).collect();
        let b = censored_sample(&x, &shifted, 1.2 * 0.7f64.exp());
        let rows: Vec<&[f64]> = a.rows().collect();
        let g = [0.3, -0.2];
        let fa = censored_objective(&censored_outcome(&a).unwrap(), &rows, &g);
        let fb = censored_objective(&censored_outcome(&b).unwrap(), &rows, &g);
        assert_abs_diff_eq!(fa, fb, epsilon = 1e-12);
    }

    #[test]
    fn matched_group_cases() {
        let pre = [0.1, 0.5, 0.9];
        let g = matched_group_from_indices(&pre, &pre, 0.0);
        assert_eq!(g.matched_fraction, 1.0);
        let g = matched_group_from_indices(&pre, &[1.0, 2.0, 3.0], 0.0);
        assert_eq!(g.matched_fraction, 0.0);
        let g = matched_group_from_indices(&pre, &[0.0, 0.5, 0.95], 0.05);
        assert_eq!(g.indicator, vec![false, true, true]);
    }

    #[test]
    fn matched_fraction_tracks_overlap() {
        let s: f64 = 0.6;
        let mut rng = crate::rng::stream(5, "overlap", 0);
        let x: Vec<Vec<f64>> = (0..20_000).map(|_| vec![1.0 - s + s * rng.random::<f64>()]).collect();
        let target = RegionSample::new("0", vec![0.0; x.len()], x, None).unwrap();
        let policy = PolicySpec::IdentityIndex {
            column: 0,
            pre: AffineMap::IDENTITY,
            post: AffineMap {
                scale: 1.0 / s,
                offset: -(1.0 - s) / s,
            },
        };
        let g = matched_group(&target, &policy, None, 0.0).unwrap();
        assert!((g.matched_fraction - s).abs() < 0.015, "{}", g.matched_fraction);
    }

    #[test]
    fn threshold_policy_indices() {
        let sample = RegionSample::new("0", vec![0.0; 2], vec![vec![1.0], vec![2.0]], Some(2.0)).unwrap();
        let m = IndexModel {
            gamma: vec![0.5],
            threshold_log: 2.0f64.ln(),
        };
        let policy = PolicySpec::IndexThreshold {
            counterfactual_threshold: 4.0,
        };
        let pre = pre_policy_index(&sample, &policy, Some(&m)).unwrap();
        let post = post_policy_index(&sample, &policy, Some(&m)).unwrap();
        assert_abs_diff_eq!(pre[0], 0.5 - 2.0f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(post[1], 1.0 - 4.0f64.ln(), epsilon = 1e-15);
    }
}
