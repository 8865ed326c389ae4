//! Synthetic ARF and the counterfactual prediction.

use serde::{Deserialize, Serialize};

use crate::arf::MatchedGroup;
use crate::error::{Error, Result};

/// Pointwise convex combination of source ARF vectors.
pub fn synthetic_arf(sources_post: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let n = sources_post.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| sources_post.iter().zip(w).map(|(s, wk)| wk * s[i]).sum())
        .collect()
}

/// The prediction split into the parts that do not depend on the weight.
///
/// `theta(w) = matched + sum_k w_k unmatched_per_source[k]`; every part is a
/// sum over target observations divided by `n0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParts {
    pub matched: f64,
    pub unmatched_per_source: Vec<f64>,
    pub matched_fraction: f64,
}

impl ThetaParts {
    pub fn new(
        matched: &MatchedGroup,
        target_post: &[f64],
        sources_post: &[Vec<f64>],
    ) -> Result<Self> {
        let n0 = matched.indicator.len();
        if target_post.len() != n0 || sources_post.iter().any(|s| s.len() != n0) {
            return Err(Error::Dimension(format!("ARF vectors must have length {n0}")));
        }
        let mut m_sum = 0.0;
        let mut u_sum = vec![0.0; sources_post.len()];
        for i in 0..n0 {
            if matched.indicator[i] {
                let v = target_post[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("target ARF at observation {i}")));
                }
                m_sum += v;
            } else {
                for (k, s) in sources_post.iter().enumerate() {
                    if !s[i].is_finite() {
                        return Err(Error::NonFinite(format!(
                            "source {k} ARF at observation {i}"
                        )));
                    }
                    u_sum[k] += s[i];
                }
            }
        }
        let scale = 1.0 / n0 as f64;
        Ok(Self {
            matched: m_sum * scale,
            unmatched_per_source: u_sum.into_iter().map(|v| v * scale).collect(),
            matched_fraction: matched.matched_fraction,
        })
    }

    pub fn unmatched(&self, w: &[f64]) -> f64 {
        self.unmatched_per_source.iter().zip(w).map(|(u, wk)| u * wk).sum()
    }

    pub fn theta(&self, w: &[f64]) -> f64 {
        self.matched + self.unmatched(w)
    }

    pub fn result(&self, w: &[f64]) -> PredictionResult {
        let unmatched = self.unmatched(w);
        PredictionResult {
            theta: self.matched + unmatched,
            matched_contribution: self.matched,
            unmatched_contribution: unmatched,
            matched_fraction: self.matched_fraction,
            per_source_unmatched_means: self.unmatched_per_source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub theta: f64,
    pub matched_contribution: f64,
    pub unmatched_contribution: f64,
    pub matched_fraction: f64,
    /// Source ARF summed over unmatched target observations, divided by `n0`.
    pub per_source_unmatched_means: Vec<f64>,
}

/// Target ARF averaged over matched observations plus the synthetic ARF
/// averaged over unmatched ones, both divided by `n0`. The target ARF is
/// never read at unmatched observations.
pub fn predict_theta(
    matched: &MatchedGroup,
    target_post: &[f64],
    sources_post: &[Vec<f64>],
    w: &[f64],
) -> Result<PredictionResult> {
    if w.len() != sources_post.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} sources",
            w.len(),
            sources_post.len()
        )));
    }
    Ok(ThetaParts::new(matched, target_post, sources_post)?.result(w))
}

/// Absolute gap between two status-quo predictions: the synthetic one and
/// the target-only one. Large values cast doubt on transferability.
pub fn null_policy_cross_check(synthetic: f64, target_only: f64) -> f64 {
    (synthetic - target_only).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn group(ind: &[bool]) -> MatchedGroup {
        let m = ind.iter().filter(|&&b| b).count();
        MatchedGroup {
            indicator: ind.to_vec(),
            pre_policy_support: (0.0, 1.0),
            matched_fraction: m as f64 / ind.len() as f64,
        }
    }

    #[test]
    fn synthetic_vertex_and_midpoint() {
        let s = vec![vec![1.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(synthetic_arf(&s, &[1.0, 0.0]), vec![1.0, 1.0]);
        assert_eq!(synthetic_arf(&s, &[0.5, 0.5]), vec![2.0, 2.0]);
        let same = vec![vec![0.3, -1.0], vec![0.3, -1.0]];
        assert_eq!(synthetic_arf(&same, &[0.2, 0.8]), vec![0.3, -1.0]);
    }

    #[test]
    fn all_matched_is_target_mean() {
        let g = group(&[true; 4]);
        let r = predict_theta(&g, &[1.0, 2.0, 3.0, 4.0], &[vec![9.0; 4]], &[1.0]).unwrap();
        assert_abs_diff_eq!(r.theta, 2.5, epsilon = 1e-15);
        assert_eq!(r.unmatched_contribution, 0.0);
    }

    #[test]
    fn none_matched_single_source() {
        let g = group(&[false; 3]);
        let r = predict_theta(
            &g,
            &[f64::NAN; 3],
            &[vec![1.0, 2.0, 6.0], vec![0.0; 3]],
            &[1.0, 0.0],
        )
        .unwrap();
        assert_abs_diff_eq!(r.theta, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn divides_by_n0() {
        let g = group(&[true, false]);
        let r = predict_theta(&g, &[2.0, f64::NAN], &[vec![0.0, 4.0]], &[1.0]).unwrap();
        assert_abs_diff_eq!(r.matched_contribution, 1.0);
        assert_abs_diff_eq!(r.unmatched_contribution, 2.0);
        assert_eq!(r.theta, r.matched_contribution + r.unmatched_contribution);
    }

    #[test]
    fn non_finite_source_names_observation() {
        let g = group(&[true, false]);
        let err = predict_theta(&g, &[1.0, 0.0], &[vec![0.0, f64::INFINITY]], &[1.0]).unwrap_err();
        assert!(err.to_string().contains("observation 1"));
    }

    proptest! {
        #[test]
        fn affine_in_weights(a in 0.0f64..1.0, vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let g = group(&[true, false, false, true, false, false]);
            let sources = vec![vals[0..6].to_vec(), vals[6..12].to_vec()];
            let target = vec![0.5; 6];
            let w = [0.2, 0.8];
            let v = [0.9, 0.1];
            let mix = [a * w[0] + (1.0 - a) * v[0], a * w[1] + (1.0 - a) * v[1]];
            let t = |x: &[f64]| predict_theta(&g, &target, &sources, x).unwrap().theta;
            prop_assert!((t(&mix) - (a * t(&w) + (1.0 - a) * t(&v))).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(vals in proptest::collection::vec(-3.0f64..3.0, 5), rot in 0usize..5) {
            let ind = [true, false, true, false, false];
            let tp: Vec<f64> = vals.iter().map(|v| v * 0.5).collect();
            let sp = vec![vals.clone()];
            let base = predict_theta(&group(&ind), &tp, &sp, &[1.0]).unwrap().theta;
            let perm = |x: &[f64]| { let mut y = x.to_vec(); y.rotate_left(rot); y };
            let mut ind2 = ind.to_vec(); ind2.rotate_left(rot);
            let other = predict_theta(&group(&ind2), &perm(&tp), &[perm(&vals)], &[1.0]).unwrap().theta;
            prop_assert!((base - other).abs() < 1e-12);
        }
    }
}
