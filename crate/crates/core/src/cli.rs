//! Command-line front end: run configuration, subcommands and output files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::data::{load_dataset, Contrast, Dataset, EffectSpec, EstimandFamily, VariableRoles};
use crate::density_ratio::DEFAULT_RATIO_BOUNDS;
use crate::estimators::{
    diagnose, estimate, EstimateReport, EstimationConfig, EstimatorChoice, WeightDiagnostics, DEFAULT_TMLE_MAX_ITER,
};
use crate::learners::{LearnerKind, StackConfig, DEFAULT_PROB_BOUND};
use crate::nuisance::NuisanceConfig;
use crate::simulation::{run_study, DgmId};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "INTMED_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
        }
    }

    /// One-line JSON error record for standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

/// Flat TOML run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file with a header row.
    pub data: PathBuf,
    pub family: EstimandFamily,
    #[serde(default)]
    pub s: Option<String>,
    #[serde(default)]
    pub w: Vec<String>,
    pub a: String,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub m: Vec<String>,
    pub y: String,
    #[serde(default = "default_contrasts")]
    pub contrasts: Vec<String>,
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_learners")]
    pub learners: Vec<String>,
    /// Stack for the exposure model; defaults to `learners`.
    #[serde(default)]
    pub exposure_learners: Option<Vec<String>>,
    /// Binomial predictions are truncated to [b, 1 − b].
    #[serde(default = "default_prob_bound")]
    pub prob_bound: f64,
    /// Density ratios are clipped to [lo, hi].
    #[serde(default = "default_ratio_bounds")]
    pub ratio_bounds: [f64; 2],
    #[serde(default = "default_tmle_max_iter")]
    pub tmle_max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub format: Option<OutputFormat>,
}

fn default_contrasts() -> Vec<String> {
    vec!["IDE".into(), "IIE".into()]
}
fn default_estimator() -> String {
    "both".into()
}
fn default_folds() -> usize {
    10
}
fn default_learners() -> Vec<String> {
    StackConfig::default_ensemble().members.iter().map(|k| k.name().to_string()).collect()
}
fn default_prob_bound() -> f64 {
    DEFAULT_PROB_BOUND
}
fn default_ratio_bounds() -> [f64; 2] {
    [DEFAULT_RATIO_BOUNDS.0, DEFAULT_RATIO_BOUNDS.1]
}
fn default_tmle_max_iter() -> usize {
    DEFAULT_TMLE_MAX_ITER
}

fn parse_stack(names: &[String], prob_bound: f64) -> CliResult<StackConfig> {
    if names.is_empty() {
        return Err(CliError::Config("learner list is empty".into()));
    }
    let kinds = names.iter().map(|n| n.parse::<LearnerKind>()).collect::<crate::Result<Vec<_>>>()?;
    Ok(StackConfig::new(kinds).with_prob_bound(prob_bound))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative data and output paths are taken from the config's directory
        if let Some(dir) = path.parent() {
            if cfg.data.is_relative() {
                cfg.data = dir.join(&cfg.data);
            }
            if cfg.output.is_relative() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    pub fn roles(&self) -> VariableRoles {
        VariableRoles {
            s: self.s.clone(),
            w: self.w.clone(),
            a: self.a.clone(),
            z: self.z.clone(),
            m: self.m.clone(),
            y: self.y.clone(),
        }
    }

    pub fn effect_spec(&self) -> CliResult<EffectSpec> {
        let contrasts = self.contrasts.iter().map(|c| c.parse::<Contrast>()).collect::<crate::Result<Vec<_>>>()?;
        if contrasts.is_empty() {
            return Err(CliError::Config("contrast list is empty".into()));
        }
        Ok(EffectSpec::new(self.family, contrasts))
    }

    pub fn estimation_config(&self) -> CliResult<EstimationConfig> {
        if !(self.prob_bound > 0.0 && self.prob_bound < 0.5) {
            return Err(CliError::Config(format!("prob_bound must lie in (0, 0.5), got {}", self.prob_bound)));
        }
        let [lo, hi] = self.ratio_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(CliError::Config(format!("ratio_bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
        }
        if self.folds == 0 {
            return Err(CliError::Config(format!("folds must be at least 1, got {}", self.folds)));
        }
        let stack = parse_stack(&self.learners, self.prob_bound)?;
        let exposure_stack = match &self.exposure_learners {
            Some(names) => parse_stack(names, self.prob_bound)?,
            None => stack.clone(),
        };
        Ok(EstimationConfig {
            estimator: self.estimator.parse::<EstimatorChoice>()?,
            nuisance: NuisanceConfig {
                folds: self.folds,
                stack,
                exposure_stack,
                ratio_bounds: (lo, hi),
                seed: self.seed,
            },
            tmle_max_iter: self.tmle_max_iter,
        })
    }

    /// Output format, from `format` or else the output file extension.
    pub fn output_format(&self) -> OutputFormat {
        self.format.unwrap_or_else(|| match self.output.extension().and_then(|e| e.to_str()) {
            Some("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        })
    }

    fn load_data(&self) -> CliResult<Dataset> {
        let roles = self.roles();
        // role errors are configuration errors, whatever the data say
        roles.validate(self.family)?;
        Ok(load_dataset(&self.data, &roles, self.family)?)
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Writes CSV and/or JSON renderings; with `Both`, the extension is replaced.
fn write_outputs(path: &Path, format: OutputFormat, csv: &str, json: &str) -> CliResult<Vec<PathBuf>> {
    let targets = match format {
        OutputFormat::Csv => vec![(path.to_path_buf(), csv)],
        OutputFormat::Json => vec![(path.to_path_buf(), json)],
        OutputFormat::Both => vec![(path.with_extension("csv"), csv), (path.with_extension("json"), json)],
    };
    for (p, body) in &targets {
        write_file(p, body)?;
    }
    Ok(targets.into_iter().map(|(p, _)| p).collect())
}

/// Console table of an estimate report.
pub fn report_table(r: &EstimateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n = {}, family = {:?}, folds = {}, seed = {}", r.n, r.family, r.folds, r.seed);
    let _ = writeln!(
        out,
        "{:<8} {:<9} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}",
        "contrast", "estimator", "estimate", "se", "ci_lo", "ci_hi", "wt>100", "wt_p75"
    );
    for e in &r.estimates {
        let _ = writeln!(
            out,
            "{:<8} {:<9} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>9.4} {:>9.3}",
            e.contrast.name(),
            e.estimator.name(),
            e.point,
            e.se,
            e.ci_lo,
            e.ci_hi,
            e.wt_frac_gt100,
            e.wt_p75
        );
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub const DIAGNOSTICS_CSV_HEADER: &str = "weight,component,frac_gt100,p75,max";

pub fn diagnostics_csv(d: &WeightDiagnostics) -> String {
    let kind = serde_json::to_value(d.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let mut out = String::from(DIAGNOSTICS_CSV_HEADER);
    out.push('\n');
    let _ = writeln!(out, "{kind},all,{},{},{}", d.overall.frac_gt100, d.overall.p75, d.overall.max);
    for c in &d.components {
        let _ = writeln!(out, "{kind},{},{},{},{}", c.pair.label(), c.tail.frac_gt100, c.tail.p75, c.tail.max);
    }
    out
}

/// Runs the full pipeline and writes the report. Returns the console summary.
pub fn cmd_estimate(cfg: &RunConfig) -> CliResult<String> {
    let spec = cfg.effect_spec()?;
    let est = cfg.estimation_config()?;
    let data = cfg.load_data()?;
    let report = estimate(&data, &spec, &est)?;
    let written = write_outputs(&cfg.output, cfg.output_format(), &report.to_csv(), &report.to_json())?;
    let mut out = report_table(&report);
    for p in written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

/// Nuisance fitting only; writes the weight-tail summary.
pub fn cmd_diagnose(cfg: &RunConfig) -> CliResult<String> {
    let spec = cfg.effect_spec()?;
    let est = cfg.estimation_config()?;
    let data = cfg.load_data()?;
    let diag = diagnose(&data, &spec, &est)?;
    let csv = diagnostics_csv(&diag);
    let json = serde_json::to_string_pretty(&diag).expect("diagnostics are serializable");
    let written = write_outputs(&cfg.output, cfg.output_format(), &csv, &json)?;
    let mut out = csv;
    for p in written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

/// Monte Carlo study; writes the summary CSV (and the per-replicate CSV when requested).
pub fn cmd_simulate(
    dgm: &str,
    n_list: &[usize],
    reps: usize,
    estimator: &str,
    seed: u64,
    out: &Path,
    replicates_out: Option<&Path>,
) -> CliResult<String> {
    let dgm: DgmId = dgm.parse()?;
    let estimator: EstimatorChoice = estimator.parse()?;
    if n_list.is_empty() || n_list.iter().any(|&n| n < 20) {
        return Err(CliError::Config("--n needs sample sizes of at least 20".into()));
    }
    let result = run_study(dgm, n_list, reps, estimator, seed)?;
    write_file(out, &result.to_csv())?;
    if let Some(path) = replicates_out {
        let mut csv = String::from("n,rep,estimator,effect,point,se,covered,tmle_converged\n");
        for r in &result.replicates {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.n,
                r.rep,
                r.estimator.name(),
                r.effect.name(),
                r.point,
                r.se,
                r.covered,
                r.tmle_converged.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        write_file(path, &csv)?;
    }
    let truth = dgm.true_values();
    let mut text = format!("{} (IDE = {}, IIE = {}), {} replicates, seed {}\n", dgm.name(), truth.ide, truth.iie, reps, seed);
    text.push_str(&result.summary_table());
    let _ = writeln!(text, "wrote {}", out.display());
    Ok(text)
}

/// Writes one simulated sample to `out`.
pub fn cmd_generate(dgm: &str, n: usize, seed: u64, out: &Path) -> CliResult<String> {
    let dgm: DgmId = dgm.parse()?;
    if n == 0 {
        return Err(CliError::Config("--n must be positive".into()));
    }
    write_file(out, &dgm.generate(n, seed).to_csv()?)?;
    Ok(format!("wrote {} rows of {} to {}\n", n, dgm.name(), out.display()))
}

#[derive(Debug, Parser)]
#[command(name = "intmed", version, about = "Interventional and transported mediation effect estimation")]
pub struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate effects from a data file described by a TOML config
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo study on a reference data-generating mechanism
    Simulate {
        /// binary_nt, binary_t, multi_nt or multi_t
        #[arg(long)]
        dgm: String,
        /// Comma-separated sample sizes
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// onestep, tmle or both
        #[arg(long, default_value = "both")]
        estimator: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-replicate CSV
        #[arg(long)]
        replicates_out: Option<PathBuf>,
    },
    /// Fit nuisances only and report weight tails
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write one sample from a reference mechanism as CSV
    Generate {
        #[arg(long)]
        dgm: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: &Command) -> CliResult<String> {
    match command {
        Command::Estimate { config } => cmd_estimate(&RunConfig::load(config)?),
        Command::Diagnose { config } => cmd_diagnose(&RunConfig::load(config)?),
        Command::Simulate { dgm, n, reps, estimator, seed, out, replicates_out } => {
            cmd_simulate(dgm, n, *reps, estimator, *seed, out, replicates_out.as_deref())
        }
        Command::Generate { dgm, n, seed, out } => cmd_generate(dgm, *n, *seed, out),
    }
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", CliError::Config(format!("cannot start worker pool: {e}")).to_json());
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
