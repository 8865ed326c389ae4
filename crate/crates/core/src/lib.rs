//! Synthetic decomposition for counterfactual policy prediction.
//!
//! A target region's post-policy average response is predicted by matching it,
//! on the observations where the policy stays inside the observed support, to a
//! simplex-weighted mixture of source-region response functions. The mixture
//! then stands in for the target where the target's own data cannot speak.
//!
//! Inference inverts a conditional chi-squared test over the weight simplex and
//! combines the accepted weights with a bootstrap scale into a Bonferroni
//! interval for the prediction.

pub mod arf;
pub mod cli;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod pipeline;
pub mod prediction;
pub mod resampling;
pub mod rng;
pub mod simulation;
pub mod weights;

pub use arf::{ArfModel, IndexModel, MatchedGroup};
pub use dataset::{AnalysisConfig, ArfMethod, MultiRegionDataset, PolicySpec, RegionSample};
pub use error::{Error, Result};
pub use inference::{InferenceReport, ThetaConfidenceInterval, WeightConfidenceSet};
pub use pipeline::{Estimate, FitOptions};
pub use prediction::PredictionResult;
pub use weights::{MomentSystem, WeightSolution};
