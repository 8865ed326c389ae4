use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("no identification: {0}")]
    NoIdentification(String),

    #[error("empty kernel window at mu = {mu}; nearest support endpoint is {nearest}")]
    EmptyWindow { mu: f64, nearest: f64 },

    #[error("empty matched group: no target observation has its post-policy index inside the pre-policy support")]
    EmptyMatchedGroup,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular metric: {0} (enable robust mode to recompute the metric per grid point)")]
    SingularMetric(String),

    #[error("insufficient bootstrap draws: {0}")]
    InsufficientDraws(String),

    #[error("bootstrap aborted: {failed} of {total} draws failed; first failure: {first}")]
    BootstrapFailed {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("simulation aborted: {failed} of {total} replications failed; first failure: {first}")]
    SimulationFailed {
        failed: usize,
        total: usize,
        first: String,
    },
}

impl Error {
    /// Module that raised the error, used in CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Schema(_) | Error::Parse { .. } | Error::Validation(_) => {
                "dataset"
            }
            Error::Config(_) => "config",
            Error::SingularFit(_)
            | Error::DegenerateDesign(_)
            | Error::NoIdentification(_)
            | Error::EmptyWindow { .. } => "arf",
            Error::EmptyMatchedGroup | Error::NonFinite(_) | Error::Dimension(_) => "weights",
            Error::SingularMetric(_) => "inference",
            Error::InsufficientDraws(_)
            | Error::BootstrapFailed { .. }
            | Error::DegenerateScale(_) => "resampling",
            Error::SimulationFailed { .. } => "simulation",
        }
    }

    /// Short remediation hint shown next to the error.
    pub fn hint(&self) -> &'static str {
        match self {
            Error::Io { .. } => "check that the path exists and is readable",
            Error::Schema(_) => "check the column-name flags against the CSV header",
            Error::Parse { .. } => "fix or drop the offending row",
            Error::Validation(_) => "each region needs at least 2 rows and there must be a source region",
            Error::Config(_) => "require 0 < kappa < alpha < 1, bootstrap_draws >= 2, c0 > 0",
            Error::SingularFit(_) => "the index has too few distinct values for a cubic fit",
            Error::DegenerateDesign(_) => "the index must vary within the region",
            Error::NoIdentification(_) => "at least one uncensored pair is required",
            Error::EmptyWindow { .. } => "source support does not cover the target's post-policy index",
            Error::EmptyMatchedGroup => "the policy moves every index outside the pre-policy support",
            Error::NonFinite(_) => "inspect the input data for extreme values",
            Error::Dimension(_) => "inputs are misaligned",
            Error::SingularMetric(_) => "rerun with --robust",
            Error::InsufficientDraws(_) => "increase bootstrap_draws",
            Error::BootstrapFailed { .. } => "too many resamples failed to refit; check support overlap",
            Error::DegenerateScale(_) => "bootstrap predictions have zero spread",
            Error::SimulationFailed { .. } => "check the Monte Carlo settings",
        }
    }
}
