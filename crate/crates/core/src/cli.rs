//! Command-line front end: `estimate`, `infer` and `mc`.
//!
//! Exit codes: 0 success, 2 usage, configuration or input error, 3 the
//! transferability test rejected, 4 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{self, AffineMap, AnalysisConfig, ArfMethod, ColumnBound, CsvSchema, PolicySpec};
use crate::error::Error;
use crate::inference::{self, InferenceReport};
use crate::pipeline::{self, CrossCheck, FitOptions, GroupwiseEstimate};
use crate::simulation::{self, Family, McResult, McSpec, Preset};
use crate::weights::WeightSolution;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REJECTED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable overriding the configured master seed.
pub const SEED_ENV: &str = "SYNDECOMP_SEED";

#[derive(Debug, Parser)]
#[command(name = "syndecomp", version, about = "Counterfactual policy prediction by synthetic decomposition")]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, short = 'j', global = true)]
    pub jobs: Option<usize>,
    /// Include wall-clock timings in the report (breaks byte-reproducibility).
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit response functions and weights, and report the point prediction.
    #[command(allow_negative_numbers = true)]
    Estimate(EstimateArgs),
    /// Bootstrap, weight confidence set, transferability test and interval.
    #[command(allow_negative_numbers = true)]
    Infer(InferArgs),
    /// Monte Carlo study on the built-in designs.
    #[command(allow_negative_numbers = true)]
    Mc(McArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV with one row per observation.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON analysis configuration; unspecified fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "region")]
    pub region_col: String,
    #[arg(long, default_value = "y")]
    pub outcome_col: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', default_value = "x")]
    pub covariates: Vec<String>,
    /// Column holding each region's status-quo threshold.
    #[arg(long)]
    pub threshold_col: Option<String>,
    /// Column used as the censored index outcome instead of the outcome.
    #[arg(long)]
    pub index_outcome_col: Option<String>,
    /// Target region identifier; defaults to the smallest identifier.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum)]
    pub arf: Option<ArfArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArfArg {
    Polynomial,
    Kernel,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Threshold replacing the target's threshold in the index.
    #[arg(long, group = "policy")]
    pub counterfactual_threshold: Option<f64>,
    /// Comma-separated covariate shift, one entry per covariate.
    #[arg(long, value_delimiter = ',', group = "policy", requires = "loading")]
    pub shift: Option<Vec<f64>>,
    /// Comma-separated index loading used with --shift.
    #[arg(long, value_delimiter = ',')]
    pub loading: Option<Vec<f64>>,
    /// Selection bound `column:lower:upper` restricting --shift; repeatable.
    #[arg(long)]
    pub select: Vec<String>,
    /// Covariate used directly as the index.
    #[arg(long, group = "policy")]
    pub index_column: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub pre_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pre_offset: f64,
    #[arg(long, default_value_t = 1.0)]
    pub post_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub post_offset: f64,
    /// JSON policy document, as an alternative to the flags.
    #[arg(long, group = "policy")]
    pub policy_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Discrete target covariate defining groups with their own weights.
    #[arg(long)]
    pub groupby: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Recompute the covariance at every grid point.
    #[arg(long)]
    pub robust: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub bootstrap_draws: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Comma-separated sample sizes per region.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n0: Vec<usize>,
    /// Comma-separated overlap shares in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    pub s: Vec<f64>,
    #[arg(long, value_enum, default_value = "reduced")]
    pub preset: PresetArg,
    /// Overrides the preset's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Overrides the preset's bootstrap draws; 0 skips inference.
    #[arg(long)]
    pub bootstrap_draws: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Directory receiving coverage.csv, accuracy.csv and report.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. }
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Self {
            code,
            message: format!("error [{}]: {}\nhint: {}", e.module(), e, e.hint()),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: format!("error [cli]: {}", message.into()),
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport<T: Serialize> {
    /// Arguments after the program name, without --jobs.
    pub command: Vec<String>,
    pub config: AnalysisConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    pub results: T,
    pub diagnostics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EstimateResults {
    pub target: String,
    pub sources: Vec<String>,
    pub n0: usize,
    pub w_hat: Vec<f64>,
    pub theta_hat: f64,
    pub matched_fraction: f64,
    pub matched_contribution: f64,
    pub unmatched_contribution: f64,
    pub weights: WeightSolution,
    pub h_min_eigenvalue: f64,
    pub source_extrapolations: usize,
    pub status_quo_check: Option<CrossCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groupwise: Option<GroupwiseEstimate>,
}

#[derive(Debug, Serialize)]
pub struct InferResults {
    pub target: String,
    pub sources: Vec<String>,
    #[serde(flatten)]
    pub report: InferenceReport,
}

fn echo(args: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if s == "--jobs" || s == "-j" {
            skip = true;
            continue;
        }
        if s.starts_with("--jobs=") || (s.starts_with("-j") && s.len() > 2) {
            continue;
        }
        out.push(s);
    }
    out
}

fn load_config(path: Option<&Path>) -> Result<AnalysisConfig, CliError> {
    let mut cfg = match path {
        Some(p) => dataset::load_config(p)?,
        None => AnalysisConfig::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.master_seed = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
    }
    Ok(cfg)
}

fn parse_bound(s: &str) -> Result<ColumnBound, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("--select expects column:lower:upper, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(ColumnBound {
        column: parts[0].parse().map_err(|_| bad())?,
        lower: parts[1].parse().map_err(|_| bad())?,
        upper: parts[2].parse().map_err(|_| bad())?,
    })
}

fn policy_from(args: &PolicyArgs) -> Result<PolicySpec, CliError> {
    if let Some(t) = args.counterfactual_threshold {
        return Ok(PolicySpec::IndexThreshold {
            counterfactual_threshold: t,
        });
    }
    if let Some(shift) = &args.shift {
        return Ok(PolicySpec::CovariateShift {
            loading: args.loading.clone().unwrap_or_default(),
            shift: shift.clone(),
            selection: args.select.iter().map(|s| parse_bound(s)).collect::<Result<_, _>>()?,
        });
    }
    if let Some(column) = args.index_column {
        return Ok(PolicySpec::IdentityIndex {
            column,
            pre: AffineMap {
                scale: args.pre_scale,
                offset: args.pre_offset,
            },
            post: AffineMap {
                scale: args.post_scale,
                offset: args.post_offset,
            },
        });
    }
    if let Some(path) = &args.policy_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        return serde_json::from_str(&text)
            .map_err(|e| usage(format!("invalid policy file {}: {e}", path.display())));
    }
    Err(usage(
        "a policy is required: --counterfactual-threshold, --shift, --index-column or --policy-file",
    ))
}

fn schema_from(args: &DataArgs) -> CsvSchema {
    CsvSchema {
        region: args.region_col.clone(),
        outcome: args.outcome_col.clone(),
        covariates: args.covariates.clone(),
        threshold: args.threshold_col.clone(),
        index_outcome: args.index_outcome_col.clone(),
        target_region: args.target.clone(),
    }
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| usage(format!("report serialization failed: {e}")))?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            CliError::from(Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| usage(format!("cannot write to stdout: {e}"))),
    }
}

fn cmd_estimate(
    a: &EstimateArgs,
    argv: &[OsString],
    timings: bool,
    stdout: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = Instant::now();
    let mut cfg = load_config(a.data.config.as_deref())?;
    if let Some(m) = a.data.arf {
        cfg.arf_method = arf_method(m);
    }
    cfg.validate()?;
    let policy = policy_from(&a.policy)?;
    let data = dataset::load_csv(&a.data.data, &schema_from(&a.data))?;
    let opts = FitOptions::from(&cfg);
    let est = pipeline::estimate(&data, &policy, &opts)?;
    let mut diagnostics = Vec::new();
    if est.stage.extrapolations > 0 {
        diagnostics.push(format!(
            "{} source response evaluations extrapolate beyond the source index support",
            est.stage.extrapolations
        ));
    }
    if est.weights.degenerate {
        diagnostics.push("weight minimizer is not unique; lexicographic tie-break applied".into());
    }
    let status_quo_check = pipeline::status_quo_cross_check(&data, &policy, &est).ok();
    let groupwise = match &a.groupby {
        Some(col) => Some(pipeline::estimate_groupwise(&data, &policy, &opts, col)?),
        None => None,
    };
    let results = EstimateResults {
        target: data.target.region_id.clone(),
        sources: data.sources.iter().map(|r| r.region_id.clone()).collect(),
        n0: data.target.n(),
        w_hat: est.weights.w.clone(),
        theta_hat: est.prediction.theta,
        matched_fraction: est.prediction.matched_fraction,
        matched_contribution: est.prediction.matched_contribution,
        unmatched_contribution: est.prediction.unmatched_contribution,
        h_min_eigenvalue: est.stage.system.min_eigenvalue,
        source_extrapolations: est.stage.extrapolations,
        weights: est.weights,
        status_quo_check,
        groupwise,
    };
    let report = RunReport {
        command: echo(argv),
        seed: cfg.master_seed,
        config: cfg,
        policy: Some(policy),
        results,
        diagnostics,
        timings_seconds: timings.then(|| start.elapsed().as_secs_f64()),
    };
    emit(&report, a.out.as_deref(), stdout)?;
    Ok(EXIT_OK)
}

fn arf_method(a: ArfArg) -> ArfMethod {
    match a {
        ArfArg::Polynomial => ArfMethod::Polynomial,
        ArfArg::Kernel => ArfMethod::Kernel,
    }
}

fn cmd_infer(
    a: &InferArgs,
    argv: &[OsString],
    timings: bool,
    stdout: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = Instant::now();
    let mut cfg = load_config(a.data.config.as_deref())?;
    if let Some(m) = a.data.arf {
        cfg.arf_method = arf_method(m);
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.bootstrap_draws {
        cfg.bootstrap_draws = v;
    }
    cfg.robust_mode |= a.robust;
    cfg.validate()?;
    let policy = policy_from(&a.policy)?;
    let data = dataset::load_csv(&a.data.data, &schema_from(&a.data))?;
    let inf = inference::infer(&data, &policy, &cfg)?;
    let r = &inf.report;
    let mut diagnostics = Vec::new();
    if r.bootstrap.failed > 0 {
        diagnostics.push(format!(
            "{} of {} bootstrap refits failed and were dropped",
            r.bootstrap.failed, r.bootstrap.requested
        ));
    }
    if r.weight_set.empty {
        diagnostics.push("weight confidence set is empty; interval is empty".into());
    }
    if r.transferability_rejected {
        diagnostics.push("transferability rejected at level alpha".into());
    }
    if r.source_extrapolations > 0 {
        diagnostics.push(format!(
            "{} source response evaluations extrapolate beyond the source index support",
            r.source_extrapolations
        ));
    }
    let code = if r.transferability_rejected {
        EXIT_REJECTED
    } else {
        EXIT_OK
    };
    let results = InferResults {
        target: data.target.region_id.clone(),
        sources: data.sources.iter().map(|r| r.region_id.clone()).collect(),
        report: inf.report,
    };
    let report = RunReport {
        command: echo(argv),
        seed: cfg.master_seed,
        config: cfg,
        policy: Some(policy),
        results,
        diagnostics,
        timings_seconds: timings.then(|| start.elapsed().as_secs_f64()),
    };
    emit(&report, a.out.as_deref(), stdout)?;
    Ok(code)
}

fn cmd_mc(
    a: &McArgs,
    argv: &[OsString],
    timings: bool,
    stdout: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = Instant::now();
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let family = match a.family {
        FamilyArg::Linear => Family::Linear,
        FamilyArg::Nonlinear => Family::Nonlinear,
    };
    let preset = match a.preset {
        PresetArg::Full => Preset::Full,
        PresetArg::Reduced => Preset::Reduced,
    };
    let mut specs = Vec::new();
    for &n0 in &a.n0 {
        for &s in &a.s {
            let mut spec = McSpec::new(family, n0, s, preset);
            if let Some(r) = a.replications {
                spec.replications = r;
            }
            if let Some(b) = a.bootstrap_draws {
                spec.bootstrap_draws = b;
            }
            spec.validate()?;
            specs.push(spec);
        }
    }
    let mut results: Vec<McResult> = Vec::with_capacity(specs.len());
    for spec in &specs {
        results.push(simulation::run_mc(spec, &cfg)?);
    }
    let summaries: Vec<McResult> = results
        .iter()
        .cloned()
        .map(|mut r| {
            r.records.clear();
            r
        })
        .collect();
    let report = RunReport {
        command: echo(argv),
        seed: cfg.master_seed,
        config: cfg,
        policy: None,
        results: summaries,
        diagnostics: Vec::new(),
        timings_seconds: timings.then(|| start.elapsed().as_secs_f64()),
    };
    let io = |p: &Path, e: std::io::Error| {
        CliError::from(Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    match &a.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            let file = |name: &str| {
                let p = dir.join(name);
                std::fs::File::create(&p).map_err(|e| io(&p, e))
            };
            simulation::write_coverage_csv(&results, file("coverage.csv")?)?;
            simulation::write_accuracy_csv(&results, file("accuracy.csv")?)?;
            for r in &results {
                let name = format!("replications_n{}_s{}.csv", r.spec.n0, r.spec.overlap);
                simulation::write_replications_csv(r, file(&name)?)?;
            }
            emit(&report, Some(&dir.join("report.json")), stdout)?;
        }
        None => match a.format {
            Format::Json => emit(&report, None, stdout)?,
            Format::Csv => {
                let mut buf = Vec::new();
                simulation::write_coverage_csv(&results, &mut buf)?;
                buf.push(b'\n');
                simulation::write_accuracy_csv(&results, &mut buf)?;
                stdout
                    .write_all(&buf)
                    .map_err(|e| usage(format!("cannot write to stdout: {e}")))?;
            }
        },
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Reports go to `stdout`, diagnostics to `stderr`.
pub fn run(argv: Vec<OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            let _ = writeln!(stderr, "error [cli]: --jobs must be positive");
            return EXIT_USAGE;
        }
        builder = builder.num_threads(j);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error [cli]: cannot start worker pool: {e}");
            return EXIT_NUMERIC;
        }
    };
    // the worker pool needs Send output; buffer and copy afterwards
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, &argv, cli.timings, &mut buf),
        Command::Infer(a) => cmd_infer(a, &argv, cli.timings, &mut buf),
        Command::Mc(a) => cmd_mc(a, &argv, cli.timings, &mut buf),
    });
    if let Err(e) = stdout.write_all(&buf).and_then(|_| stdout.flush()) {
        let _ = writeln!(stderr, "error [cli]: cannot write to stdout: {e}");
        return EXIT_USAGE;
    }
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.message);
            e.code
        }
    }
}
