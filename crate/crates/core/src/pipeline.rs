//! End-to-end point estimation: indices, ARFs, matched group, moments,
//! weights and prediction. The bootstrap reruns [`fit_stage`] on every
//! resample.

use serde::{Deserialize, Serialize};

use crate::arf::{self, ArfModel, IndexModel, MatchedGroup};
use crate::dataset::{AnalysisConfig, ArfMethod, MultiRegionDataset, PolicySpec, RegionSample};
use crate::error::{Error, Result};
use crate::prediction::{self, PredictionResult, ThetaParts};
use crate::resampling::DrawFit;
use crate::weights::{self, MomentSystem, WeightSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub arf_method: ArfMethod,
    pub matched_trim: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            arf_method: ArfMethod::Polynomial,
            matched_trim: 0.0,
        }
    }
}

impl From<&AnalysisConfig> for FitOptions {
    fn from(c: &AnalysisConfig) -> Self {
        Self {
            arf_method: c.arf_method,
            matched_trim: c.matched_trim,
        }
    }
}

/// Everything that does not depend on the weight.
#[derive(Debug, Clone)]
pub struct Stage {
    /// Target first, then sources; `None` unless the policy uses thresholds.
    pub index_models: Vec<Option<IndexModel>>,
    /// Target first, then sources.
    pub arfs: Vec<ArfModel>,
    pub matched: MatchedGroup,
    /// Target ARF at post-policy indices; NaN where unmatched.
    pub target_post: Vec<f64>,
    /// Source ARFs at the target's post-policy indices.
    pub sources_post: Vec<Vec<f64>>,
    pub system: MomentSystem,
    pub parts: ThetaParts,
    /// Source ARF evaluations outside that source's index support.
    pub extrapolations: usize,
}

fn index_model(region: &RegionSample, policy: &PolicySpec) -> Result<Option<IndexModel>> {
    match policy {
        PolicySpec::IndexThreshold { .. } => arf::fit_censored_index(region).map(Some),
        _ => Ok(None),
    }
}

/// Source ARFs at the target's covariates under `policy`, plus the count of
/// evaluations outside each source's support.
fn source_values(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    index_models: &[Option<IndexModel>],
    arfs: &[ArfModel],
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut extrapolations = 0;
    let mut out = Vec::with_capacity(data.k());
    for k in 0..data.k() {
        let post = arf::post_policy_index(&data.target, policy, index_models[k + 1].as_ref())?;
        let mut vals = Vec::with_capacity(post.len());
        for mu in post {
            let v = arf::evaluate_arf(&arfs[k + 1], mu)?;
            extrapolations += usize::from(v.extrapolated);
            vals.push(v.value);
        }
        out.push(vals);
    }
    Ok((out, extrapolations))
}

pub fn fit_stage(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    opts: &FitOptions,
) -> Result<Stage> {
    policy.validate(data.dim())?;
    let index_models = data
        .regions()
        .map(|r| index_model(r, policy))
        .collect::<Result<Vec<_>>>()?;
    let arfs = data
        .regions()
        .zip(&index_models)
        .map(|(r, m)| {
            let pre = arf::pre_policy_index(r, policy, m.as_ref())?;
            arf::fit_arf(opts.arf_method, r, &pre)
        })
        .collect::<Result<Vec<_>>>()?;

    let pre0 = arf::pre_policy_index(&data.target, policy, index_models[0].as_ref())?;
    let post0 = arf::post_policy_index(&data.target, policy, index_models[0].as_ref())?;
    let matched = arf::matched_group_from_indices(&pre0, &post0, opts.matched_trim);
    let mut target_post = vec![f64::NAN; data.target.n()];
    for (i, mu) in post0.iter().enumerate() {
        if matched.indicator[i] {
            target_post[i] = arf::evaluate_arf(&arfs[0], *mu)?.value;
        }
    }
    let (sources_post, extrapolations) = source_values(data, policy, &index_models, &arfs)?;
    let system = weights::build_moment_system(&matched, &target_post, &sources_post)?;
    let parts = ThetaParts::new(&matched, &target_post, &sources_post)?;
    Ok(Stage {
        index_models,
        arfs,
        matched,
        target_post,
        sources_post,
        system,
        parts,
        extrapolations,
    })
}

/// Weight-free parts of a refit, as kept by the bootstrap.
pub fn draw_fit(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    opts: &FitOptions,
) -> Result<DrawFit> {
    fit_stage(data, policy, opts).map(|s| DrawFit {
        system: s.system,
        parts: s.parts,
    })
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub stage: Stage,
    pub weights: WeightSolution,
    pub prediction: PredictionResult,
}

pub fn estimate(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    opts: &FitOptions,
) -> Result<Estimate> {
    let stage = fit_stage(data, policy, opts)?;
    if stage.extrapolations > 0 {
        log::warn!(
            "{} source ARF evaluations fall outside the source index support",
            stage.extrapolations
        );
    }
    let weights = weights::solve_simplex_qp(&stage.system)?;
    let prediction = stage.parts.result(&weights.w);
    Ok(Estimate {
        stage,
        weights,
        prediction,
    })
}

/// Two status-quo predictions for the target: the synthetic one, averaging
/// `sum_k w_k m_k` over every target observation, and the target-only mean
/// of its own fitted ARF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub synthetic: f64,
    pub target_only: f64,
    pub discrepancy: f64,
}

pub fn status_quo_cross_check(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    est: &Estimate,
) -> Result<CrossCheck> {
    let status_quo = policy.status_quo(data.target.threshold)?;
    let stage = &est.stage;
    let (sources, _) = source_values(data, &status_quo, &stage.index_models, &stage.arfs)?;
    let n0 = data.target.n() as f64;
    let syn = prediction::synthetic_arf(&sources, &est.weights.w);
    let synthetic = syn.iter().sum::<f64>() / n0;
    let pre0 = arf::pre_policy_index(&data.target, &status_quo, stage.index_models[0].as_ref())?;
    let mut own = 0.0;
    for mu in pre0 {
        own += arf::evaluate_arf(&stage.arfs[0], mu)?.value;
    }
    let target_only = own / n0;
    Ok(CrossCheck {
        synthetic,
        target_only,
        discrepancy: prediction::null_policy_cross_check(synthetic, target_only),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupWeights {
    pub level: f64,
    pub n_target: usize,
    pub weights: Option<WeightSolution>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupwiseEstimate {
    pub column: String,
    pub groups: Vec<GroupWeights>,
    /// Prediction with each unmatched observation using its group's weight;
    /// absent when any group failed.
    pub theta: Option<f64>,
}

/// Weights that vary with a discrete target covariate.
pub fn estimate_groupwise(
    data: &MultiRegionDataset,
    policy: &PolicySpec,
    opts: &FitOptions,
    column: &str,
) -> Result<GroupwiseEstimate> {
    let col = data.covariate_index(column)?;
    let stage = fit_stage(data, policy, opts)?;
    let labels = data.target.covariate_column(col);
    let systems = weights::build_groupwise_systems(
        &stage.matched,
        &stage.target_post,
        &stage.sources_post,
        &labels,
    );
    let solved = weights::solve_groupwise_weights(systems);
    let mut groups = Vec::new();
    let mut theta_sum = 0.0;
    let mut complete = true;
    for (level, res) in solved {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == level).collect();
        match res {
            Ok(sol) => {
                for &i in &idx {
                    theta_sum += if stage.matched.indicator[i] {
                        stage.target_post[i]
                    } else {
                        stage.sources_post.iter().zip(&sol.w).map(|(s, w)| w * s[i]).sum()
                    };
                }
                groups.push(GroupWeights {
                    level,
                    n_target: idx.len(),
                    weights: Some(sol),
                    error: None,
                });
            }
            Err(e) => {
                complete = false;
                groups.push(GroupWeights {
                    level,
                    n_target: idx.len(),
                    weights: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Validation("target region has no observations".into()));
    }
    Ok(GroupwiseEstimate {
        column: column.to_string(),
        groups,
        theta: complete.then(|| theta_sum / data.target.n() as f64),
    })
}
