//! Moment matrices and the simplex-constrained weight problem.
//!
//! The weight minimizes the matched-group mean squared gap between the
//! synthetic and target post-policy ARFs, `w'Hw - 2h'w + c`, over the
//! probability simplex.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arf::MatchedGroup;
use crate::error::{Error, Result};
use crate::linalg;

/// Largest source count solved by exhaustive face enumeration.
pub const MAX_ENUMERATION_K: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub h_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
    /// Matched-group mean of the squared target ARF; makes `rho_sq` a mean
    /// squared error rather than an objective up to a constant.
    pub target_sq: f64,
    pub n0: usize,
    pub min_eigenvalue: f64,
}

impl MomentSystem {
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>, target_sq: f64, n0: usize) -> Result<Self> {
        let k = h_vec.len();
        if h_mat.nrows() != k || h_mat.ncols() != k {
            return Err(Error::Dimension(format!(
                "H is {}x{} but h has length {k}",
                h_mat.nrows(),
                h_mat.ncols()
            )));
        }
        if h_mat.iter().chain(h_vec.iter()).any(|v| !v.is_finite()) || !target_sq.is_finite() {
            return Err(Error::NonFinite("moment system entries".into()));
        }
        let h_mat = linalg::symmetrize(&h_mat);
        let min_eigenvalue = linalg::min_eigenvalue(&h_mat);
        Ok(Self {
            h_mat,
            h_vec,
            target_sq,
            n0,
            min_eigenvalue,
        })
    }

    pub fn k(&self) -> usize {
        self.h_vec.len()
    }

    /// `w'Hw - 2h'w + c`.
    pub fn rho_sq(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.h_mat * w)) - 2.0 * self.h_vec.dot(w) + self.target_sq
    }

    /// `w'Hw - 2h'w`, the objective without the constant.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.h_mat * w)) - 2.0 * self.h_vec.dot(w)
    }

    /// Scale-free tolerance below which a weight counts as zero.
    pub fn zero_tolerance(&self) -> f64 {
        let hn = self.h_mat.norm();
        let ratio = if hn > 0.0 { self.h_vec.norm() / hn } else { 0.0 };
        1e-10 * (1.0 + ratio)
    }
}

/// Sample moments over the matched group, both sums divided by `n0`.
///
/// `target_post[i]` is read only where `matched.indicator[i]` holds.
pub fn build_moment_system(
    matched: &MatchedGroup,
    target_post: &[f64],
    sources_post: &[Vec<f64>],
) -> Result<MomentSystem> {
    let n0 = matched.indicator.len();
    let k = sources_post.len();
    if k == 0 {
        return Err(Error::Dimension("no source ARFs".into()));
    }
    if target_post.len() != n0 || sources_post.iter().any(|s| s.len() != n0) {
        return Err(Error::Dimension(format!(
            "ARF vectors must have length n0 = {n0}"
        )));
    }
    if matched.n_matched() == 0 {
        return Err(Error::EmptyMatchedGroup);
    }
    let mut h_mat = DMatrix::zeros(k, k);
    let mut h_vec = DVector::zeros(k);
    let mut target_sq = 0.0;
    let mut m = vec![0.0; k];
    for i in (0..n0).filter(|&i| matched.indicator[i]) {
        let m0 = target_post[i];
        if !m0.is_finite() {
            return Err(Error::NonFinite(format!("target ARF at observation {i}")));
        }
        for (j, s) in sources_post.iter().enumerate() {
            m[j] = s[i];
            if !m[j].is_finite() {
                return Err(Error::NonFinite(format!("source {j} ARF at observation {i}")));
            }
        }
        for a in 0..k {
            h_vec[a] += m[a] * m0;
            for b in a..k {
                h_mat[(a, b)] += m[a] * m[b];
            }
        }
        target_sq += m0 * m0;
    }
    for a in 0..k {
        for b in 0..a {
            h_mat[(a, b)] = h_mat[(b, a)];
        }
    }
    let scale = 1.0 / n0 as f64;
    MomentSystem::new(h_mat * scale, h_vec * scale, target_sq * scale, n0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub w: Vec<f64>,
    pub rho_sq: f64,
    /// Multiplier on the adding-up constraint.
    pub lambda_tilde: f64,
    /// Multipliers on `w >= 0`, all `<= 0` at a minimizer.
    pub lambda: Vec<f64>,
    /// Indices with zero weight.
    pub active_set: Vec<usize>,
    pub stationarity_residual: f64,
    /// Set when H is numerically singular or several minimizers tie.
    pub degenerate: bool,
}

impl WeightSolution {
    pub fn w_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    /// Checks feasibility, dual sign, complementary slackness and
    /// stationarity against `sys`.
    pub fn verify_kkt(&self, sys: &MomentSystem) -> std::result::Result<(), String> {
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-10 || self.w.iter().any(|&v| v < -1e-10) {
            return Err(format!("infeasible weight {:?}", self.w));
        }
        let scale = 1.0 + sys.h_vec.norm() + sys.h_mat.norm();
        if let Some(l) = self.lambda.iter().find(|&&l| l > 1e-8 * scale) {
            return Err(format!("positive multiplier {l}"));
        }
        for (l, w) in self.lambda.iter().zip(&self.w) {
            if (l * w).abs() > 1e-12 * scale {
                return Err(format!("slackness violated: lambda {l}, w {w}"));
            }
        }
        let w = self.w_vec();
        let lam = DVector::from_column_slice(&self.lambda);
        let res = &sys.h_mat * &w - &sys.h_vec + DVector::repeat(w.len(), self.lambda_tilde) + lam;
        if res.norm() > 1e-8 * (1.0 + sys.h_vec.norm()) {
            return Err(format!("stationarity residual {}", res.norm()));
        }
        Ok(())
    }
}

/// Minimizer of `w'Hw - 2h'w` over the simplex.
///
/// For `K <= 12` every face is solved exactly and the best feasible face
/// solution kept; ties go to the lexicographically smallest active set. Larger
/// problems use accelerated projected gradient.
pub fn solve_simplex_qp(sys: &MomentSystem) -> Result<WeightSolution> {
    let k = sys.k();
    if k == 0 {
        return Err(Error::Dimension("empty moment system".into()));
    }
    if sys.min_eigenvalue < -1e-8 * (1.0 + sys.h_mat.norm()) {
        log::warn!("H has a negative eigenvalue {}", sys.min_eigenvalue);
    }
    let (w, tied) = if k <= MAX_ENUMERATION_K {
        enumerate_faces(sys)
    } else {
        (projected_gradient(sys), false)
    };
    let singular = sys.min_eigenvalue < 1e-10;
    if singular {
        log::warn!(
            "H is nearly singular (min eigenvalue {:.3e}); the weight may not be identified",
            sys.min_eigenvalue
        );
    }
    Ok(certify(sys, w, tied || singular))
}

fn face_solution(sys: &MomentSystem, support: &[usize]) -> Option<DVector<f64>> {
    let s = support.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = sys.h_mat[(i, j)];
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = sys.h_vec[i];
    }
    rhs[s] = 1.0;
    // reject faces whose KKT matrix is numerically singular
    let scale = kkt.amax().max(1.0);
    let svd = kkt.clone().svd(false, false);
    let smin = svd.singular_values.min();
    if smin <= 1e-13 * scale {
        return None;
    }
    let sol = linalg::solve(&kkt, &rhs)?;
    let mut w = DVector::zeros(sys.k());
    for (a, &i) in support.iter().enumerate() {
        w[i] = sol[a];
    }
    Some(w)
}

fn active_of(w: &DVector<f64>) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] == 0.0).collect()
}

fn enumerate_faces(sys: &MomentSystem) -> (DVector<f64>, bool) {
    let k = sys.k();
    let feas_tol = 1e-12;
    let mut candidates: Vec<(f64, DVector<f64>)> = Vec::new();
    for mask in 1u32..(1u32 << k) {
        let support: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let Some(mut w) = face_solution(sys, &support) else { continue };
        if w.iter().any(|&v| v < -feas_tol) {
            continue;
        }
        w.iter_mut().for_each(|v| *v = v.max(0.0));
        let total = w.sum();
        w /= total;
        candidates.push((sys.objective(&w), w));
    }
    let best = candidates
        .iter()
        .map(|c| c.0)
        .fold(f64::INFINITY, f64::min);
    let tie_tol = 1e-12 * (1.0 + best.abs() + sys.h_mat.norm());
    let mut tied: Vec<(Vec<usize>, DVector<f64>)> = candidates
        .into_iter()
        .filter(|c| c.0 <= best + tie_tol)
        .map(|(_, mut w)| {
            let zt = sys.zero_tolerance();
            w.iter_mut().for_each(|v| {
                if *v <= zt {
                    *v = 0.0
                }
            });
            let total = w.sum();
            w /= total;
            (active_of(&w), w)
        })
        .collect();
    tied.sort_by(|a, b| a.0.cmp(&b.0));
    let distinct = tied
        .windows(2)
        .any(|p| (&p[0].1 - &p[1].1).amax() > 1e-8);
    (tied.swap_remove(0).1, distinct)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn projected_gradient(sys: &MomentSystem) -> DVector<f64> {
    let k = sys.k();
    let lmax = sys
        .h_mat
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let step = if lmax > 0.0 { 0.5 / lmax } else { 1.0 };
    let mut x = DVector::repeat(k, 1.0 / k as f64);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..200_000 {
        let grad = (&sys.h_mat * &y - &sys.h_vec) * 2.0;
        let next = project_to_simplex(&(&y - grad * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        let change = (&next - &x).amax();
        x = next;
        t = t_next;
        if change < 1e-15 {
            break;
        }
    }
    x
}

fn certify(sys: &MomentSystem, mut w: DVector<f64>, degenerate: bool) -> WeightSolution {
    let zt = sys.zero_tolerance();
    w.iter_mut().for_each(|v| {
        if *v <= zt {
            *v = 0.0
        }
    });
    let total = w.sum();
    w /= total;
    let grad = &sys.h_mat * &w - &sys.h_vec;
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    // the adding-up multiplier is pinned by the support equations
    let lambda_tilde = -support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
    let lambda: Vec<f64> = (0..w.len())
        .map(|i| if w[i] > 0.0 { 0.0 } else { -(grad[i] + lambda_tilde) })
        .collect();
    let residual = (0..w.len())
        .map(|i| (grad[i] + lambda_tilde + lambda[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    WeightSolution {
        rho_sq: sys.rho_sq(&w),
        active_set: active_of(&w),
        w: w.iter().copied().collect(),
        lambda_tilde,
        lambda,
        stationarity_residual: residual,
        degenerate,
    }
}

/// Per-level moment systems for a discrete conditioning covariate.
///
/// Each level's moments average over that level's target observations, giving
/// the group-conditional `H(x)` and `h(x)`.
pub fn build_groupwise_systems(
    matched: &MatchedGroup,
    target_post: &[f64],
    sources_post: &[Vec<f64>],
    groups: &[f64],
) -> Vec<(f64, Result<MomentSystem>)> {
    let mut levels: Vec<f64> = groups.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
        .into_iter()
        .map(|level| {
            let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == level).collect();
            let sub = matched.subset(&idx);
            let tp: Vec<f64> = idx.iter().map(|&i| target_post[i]).collect();
            let sp: Vec<Vec<f64>> = sources_post
                .iter()
                .map(|s| idx.iter().map(|&i| s[i]).collect())
                .collect();
            (level, build_moment_system(&sub, &tp, &sp))
        })
        .collect()
}

/// One simplex problem per group; a failed group does not stop the others.
pub fn solve_groupwise_weights(
    systems: Vec<(f64, Result<MomentSystem>)>,
) -> Vec<(f64, Result<WeightSolution>)> {
    systems
        .into_iter()
        .map(|(level, sys)| (level, sys.and_then(|s| solve_simplex_qp(&s))))
        .collect()
}
