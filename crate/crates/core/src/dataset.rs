//! Multi-region samples, policy definitions and analysis settings.
//!
//! Data arrive as a single long CSV with one row per observation and a region
//! identifier column. Covariates never carry an intercept column; estimators
//! that need one add it themselves.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One region's observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSample {
    pub region_id: String,
    pub outcomes: Vec<f64>,
    /// Row-major `n_k x dim` covariate matrix.
    covariates: Vec<f64>,
    dim: usize,
    /// Region-level policy constant (e.g. a minimum wage), strictly positive.
    pub threshold: Option<f64>,
    /// Secondary outcome used to estimate the policy index (log wages in the
    /// minimum-wage application).
    pub index_outcome: Option<Vec<f64>>,
}

impl RegionSample {
    pub fn new(
        region_id: impl Into<String>,
        outcomes: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        threshold: Option<f64>,
    ) -> Result<Self> {
        let region_id = region_id.into();
        let dim = covariates.first().map_or(0, Vec::len);
        if covariates.iter().any(|r| r.len() != dim) {
            return Err(Error::Validation(format!(
                "region {region_id}: ragged covariate rows"
            )));
        }
        let flat = covariates.into_iter().flatten().collect();
        Self::from_flat(region_id, outcomes, flat, dim, threshold, None)
    }

    pub fn from_flat(
        region_id: String,
        outcomes: Vec<f64>,
        covariates: Vec<f64>,
        dim: usize,
        threshold: Option<f64>,
        index_outcome: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "region {region_id} has {n} observations; at least 2 are required"
            )));
        }
        if covariates.len() != n * dim {
            return Err(Error::Validation(format!(
                "region {region_id}: {} outcomes but {} covariate entries for dimension {dim}",
                n,
                covariates.len()
            )));
        }
        if let Some(pos) = outcomes.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "region {region_id}: non-finite outcome at observation {pos}"
            )));
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "region {region_id}: non-finite covariate at observation {}",
                pos / dim.max(1)
            )));
        }
        if let Some(t) = threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Validation(format!(
                    "region {region_id}: threshold must be positive, got {t}"
                )));
            }
        }
        if let Some(io) = &index_outcome {
            if io.len() != n || io.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "region {region_id}: index outcome must be finite with {n} entries"
                )));
            }
        }
        Ok(Self {
            region_id,
            outcomes,
            covariates,
            dim,
            threshold,
            index_outcome,
        })
    }

    pub fn with_index_outcome(mut self, index_outcome: Vec<f64>) -> Result<Self> {
        if index_outcome.len() != self.n() || index_outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "region {}: index outcome must be finite with {} entries",
                self.region_id,
                self.n()
            )));
        }
        self.index_outcome = Some(index_outcome);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn covariate_column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Rows selected by `indices`, in that order (duplicates allowed).
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let outcomes = indices.iter().map(|&i| self.outcomes[i]).collect();
        let mut cov = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            cov.extend_from_slice(self.row(i));
        }
        let index_outcome = self
            .index_outcome
            .as_ref()
            .map(|io| indices.iter().map(|&i| io[i]).collect());
        Self::from_flat(
            self.region_id.clone(),
            outcomes,
            cov,
            self.dim,
            self.threshold,
            index_outcome,
        )
    }

    /// Observations whose covariate `column` equals `level`.
    pub fn subset_where(&self, column: usize, level: f64) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.row(i)[column] == level).collect()
    }
}

/// Target region plus an ordered list of source regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRegionDataset {
    pub covariate_names: Vec<String>,
    pub target: RegionSample,
    pub sources: Vec<RegionSample>,
}

impl MultiRegionDataset {
    pub fn new(
        covariate_names: Vec<String>,
        target: RegionSample,
        sources: Vec<RegionSample>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Validation("no source regions".into()));
        }
        let mut seen = HashSet::new();
        for r in std::iter::once(&target).chain(&sources) {
            if !seen.insert(r.region_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate region identifier {}",
                    r.region_id
                )));
            }
            if r.dim() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "region {} has {} covariates, expected {}",
                    r.region_id,
                    r.dim(),
                    covariate_names.len()
                )));
            }
        }
        Ok(Self {
            covariate_names,
            target,
            sources,
        })
    }

    pub fn k(&self) -> usize {
        self.sources.len()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionSample> {
        std::iter::once(&self.target).chain(self.sources.iter())
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate column '{name}'")))
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub region: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub threshold: Option<String>,
    pub index_outcome: Option<String>,
    /// Target region identifier; defaults to the smallest identifier.
    pub target_region: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            region: "region".into(),
            outcome: "y".into(),
            covariates: vec!["x".into()],
            threshold: None,
            index_outcome: None,
            target_region: None,
        }
    }
}

/// Numeric identifiers sort numerically, everything else lexicographically.
fn region_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

#[derive(Default)]
struct RegionRows {
    outcomes: Vec<f64>,
    covariates: Vec<f64>,
    index_outcome: Vec<f64>,
    threshold: Option<f64>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MultiRegionDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<MultiRegionDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let region_col = col(&schema.region)?;
    let outcome_col = col(&schema.outcome)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let threshold_col = schema.threshold.as_deref().map(col).transpose()?;
    let index_col = schema.index_outcome.as_deref().map(col).transpose()?;

    let mut groups: BTreeMap<String, RegionRows> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Parse {
                    row: line,
                    column: name.to_string(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row: line,
                column: name.to_string(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: name.to_string(),
                    message: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        let region = record.get(region_col).unwrap_or("").to_string();
        if region.is_empty() {
            return Err(Error::Parse {
                row: line,
                column: schema.region.clone(),
                message: "missing region identifier".into(),
            });
        }
        let y = field(outcome_col, &schema.outcome)?;
        let mut xs = Vec::with_capacity(cov_cols.len());
        for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
            xs.push(field(c, name)?);
        }
        let thr = match threshold_col {
            Some(c) => Some(field(c, schema.threshold.as_deref().unwrap())?),
            None => None,
        };
        let io = match index_col {
            Some(c) => Some(field(c, schema.index_outcome.as_deref().unwrap())?),
            None => None,
        };
        let g = groups.entry(region.clone()).or_default();
        if let Some(t) = thr {
            match g.threshold {
                Some(prev) if prev != t => {
                    return Err(Error::Validation(format!(
                        "threshold is not constant within region {region} (row {line})"
                    )))
                }
                _ => g.threshold = Some(t),
            }
        }
        g.outcomes.push(y);
        g.covariates.extend(xs);
        if let Some(v) = io {
            g.index_outcome.push(v);
        }
    }

    let mut ids: Vec<String> = groups.keys().cloned().collect();
    ids.sort_by(|a, b| region_order(a, b));
    let target_id = match &schema.target_region {
        Some(t) => {
            if !groups.contains_key(t) {
                return Err(Error::Validation(format!("target region {t} not present")));
            }
            t.clone()
        }
        None => ids
            .first()
            .cloned()
            .ok_or_else(|| Error::Validation("empty dataset".into()))?,
    };
    let dim = schema.covariates.len();
    let mut target = None;
    let mut sources = Vec::new();
    for id in ids {
        let g = groups.remove(&id).unwrap();
        let io = index_col.map(|_| g.index_outcome);
        let sample = RegionSample::from_flat(id.clone(), g.outcomes, g.covariates, dim, g.threshold, io)?;
        if id == target_id {
            target = Some(sample);
        } else {
            sources.push(sample);
        }
    }
    MultiRegionDataset::new(schema.covariates.clone(), target.unwrap(), sources)
}

/// Writes the dataset in the long layout read by [`load_csv`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv<W: std::io::Write>(data: &MultiRegionDataset, writer: W) -> Result<CsvSchema> {
    let has_threshold = data.regions().any(|r| r.threshold.is_some());
    let has_index = data.regions().all(|r| r.index_outcome.is_some());
    let schema = CsvSchema {
        region: "region".into(),
        outcome: "y".into(),
        covariates: data.covariate_names.clone(),
        threshold: has_threshold.then(|| "threshold".into()),
        index_outcome: has_index.then(|| "index_outcome".into()),
        target_region: Some(data.target.region_id.clone()),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["region".to_string(), "y".to_string()];
    if has_threshold {
        header.push("threshold".into());
    }
    if has_index {
        header.push("index_outcome".into());
    }
    header.extend(data.covariate_names.iter().cloned());
    let csv_err = |e: csv::Error| Error::Schema(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in data.regions() {
        for i in 0..r.n() {
            let mut rec = vec![r.region_id.clone(), r.outcomes[i].to_string()];
            if has_threshold {
                rec.push(r.threshold.map(|t| t.to_string()).unwrap_or_default());
            }
            if let Some(io) = r.index_outcome.as_ref().filter(|_| has_index) {
                rec.push(io[i].to_string());
            }
            rec.extend(r.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("csv flush failed: {e}")))?;
    Ok(schema)
}

/// Affine scalar map `x -> scale * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        scale: 1.0,
        offset: 0.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }
}

/// Closed interval constraint on one covariate, used to describe the set of
/// observations a covariate-shift policy applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnBound {
    pub column: usize,
    pub lower: f64,
    pub upper: f64,
}

/// How pre- and post-policy index values are computed from covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PolicySpec {
    /// Index `x'gamma_k - log(threshold_k)`; the policy replaces the
    /// threshold with `counterfactual_threshold`.
    IndexThreshold { counterfactual_threshold: f64 },
    /// Index `loading'x`; the policy shifts covariates by `shift` for
    /// observations inside every bound in `selection`.
    CovariateShift {
        loading: Vec<f64>,
        shift: Vec<f64>,
        selection: Vec<ColumnBound>,
    },
    /// Index is an affine map of one covariate before (`pre`) and after
    /// (`post`) the policy.
    IdentityIndex {
        column: usize,
        pre: AffineMap,
        post: AffineMap,
    },
}

impl PolicySpec {
    /// Status-quo policy for a target region: post-policy index equals the
    /// pre-policy index. Threshold mode needs the target's own threshold.
    pub fn status_quo(&self, target_threshold: Option<f64>) -> Result<PolicySpec> {
        Ok(match self {
            PolicySpec::IndexThreshold { .. } => PolicySpec::IndexThreshold {
                counterfactual_threshold: target_threshold.ok_or_else(|| {
                    Error::Validation("target region has no threshold".into())
                })?,
            },
            PolicySpec::CovariateShift { loading, shift, .. } => PolicySpec::CovariateShift {
                loading: loading.clone(),
                shift: vec![0.0; shift.len()],
                selection: Vec::new(),
            },
            PolicySpec::IdentityIndex { column, pre, .. } => PolicySpec::IdentityIndex {
                column: *column,
                pre: *pre,
                post: *pre,
            },
        })
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PolicySpec::IndexThreshold {
                counterfactual_threshold: t,
            } => {
                if !(*t > 0.0 && t.is_finite()) {
                    return Err(Error::Validation(format!(
                        "counterfactual threshold must be positive, got {t}"
                    )));
                }
            }
            PolicySpec::CovariateShift {
                loading,
                shift,
                selection,
            } => {
                if loading.len() != dim || shift.len() != dim {
                    return Err(Error::Validation(format!(
                        "loading and shift must have length {dim}"
                    )));
                }
                if loading.iter().chain(shift).any(|v| !v.is_finite()) {
                    return Err(Error::Validation("non-finite policy parameter".into()));
                }
                if let Some(b) = selection.iter().find(|b| b.column >= dim || b.lower > b.upper) {
                    return Err(Error::Validation(format!("invalid selection bound {b:?}")));
                }
            }
            PolicySpec::IdentityIndex { column, pre, post } => {
                if *column >= dim {
                    return Err(Error::Validation(format!(
                        "index column {column} out of range for {dim} covariates"
                    )));
                }
                if ![pre.scale, pre.offset, post.scale, post.offset]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(Error::Validation("non-finite policy map".into()));
                }
            }
        }
        Ok(())
    }
}

/// Estimator used for every region's average response function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ArfMethod {
    #[default]
    Polynomial,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub bootstrap_draws: usize,
    pub truncation_constant: f64,
    pub simplex_grid_size: usize,
    pub master_seed: u64,
    pub robust_mode: bool,
    pub arf_method: ArfMethod,
    /// Widening of the pre-policy support when forming the matched group.
    pub matched_trim: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            kappa: 0.005,
            bootstrap_draws: 200,
            truncation_constant: 0.05,
            simplex_grid_size: 5000,
            master_seed: 0,
            robust_mode: false,
            arf_method: ArfMethod::Polynomial,
            matched_trim: 0.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.kappa > 0.0 && self.kappa < self.alpha) {
            return Err(Error::Config(format!(
                "kappa must lie in (0, alpha) = (0, {}), got {}",
                self.alpha, self.kappa
            )));
        }
        if self.bootstrap_draws < 2 {
            return Err(Error::Config(format!(
                "bootstrap_draws must be at least 2, got {}",
                self.bootstrap_draws
            )));
        }
        if !(self.truncation_constant > 0.0) {
            return Err(Error::Config(format!(
                "truncation_constant must be positive, got {}",
                self.truncation_constant
            )));
        }
        if self.simplex_grid_size == 0 {
            return Err(Error::Config("simplex_grid_size must be positive".into()));
        }
        if !(self.matched_trim >= 0.0 && self.matched_trim.is_finite()) {
            return Err(Error::Config("matched_trim must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: AnalysisConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<AnalysisConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    AnalysisConfig::from_json_str(&text)
}
