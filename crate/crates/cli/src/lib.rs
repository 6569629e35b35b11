// SPDX-License-Identifier: Apache-2.0

//! `dynahull` command-line tool: scene generation, map filtering,
//! evaluation and parameter sweeps. Every command reports in JSON.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dynahull::cloud::{CloudError, CloudFormat};
use dynahull::filter::{FilterError, ThresholdMode};
use thiserror::Error;

mod commands;
pub mod config;

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failure classes, each with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error("labels required: {0}")]
    MissingLabels(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Pipeline(_) => 4,
            CliError::MissingLabels(_) => 5,
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::InvalidParams(m) => CliError::Config(m),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dynahull",
    version,
    about = "Remove dynamic points from accumulated point-cloud maps"
)]
pub struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (output does not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic scene.
    Gen(GenArgs),
    /// Filter dynamic points out of a map.
    Filter(FilterArgs),
    /// Compare a map against a reference map.
    Eval(EvalArgs),
    /// Sweep one filter parameter and evaluate each run.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    PcdBinary,
    PcdAscii,
}

impl From<FormatArg> for CloudFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::PcdBinary => CloudFormat::PcdBinary,
            FormatArg::PcdAscii => CloudFormat::PcdAscii,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario JSON; defaults to the config file's scenario, then the bundled reference.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the static-only reference map here.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub actors: Option<usize>,
    #[arg(long, value_enum, default_value = "pcd-binary")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Quantile,
    Iterative,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Quantile => ThresholdMode::Quantile,
            ModeArg::Iterative => ThresholdMode::Iterative,
        }
    }
}

/// Filter parameters shared by `filter` and `bench`.
#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    /// Neighbors per density hull.
    #[arg(long)]
    pub k: Option<usize>,
    /// k-means cluster count.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Removal percentage for the smallest cluster.
    #[arg(long)]
    pub remove_min: Option<f64>,
    /// Removal percentage for the largest cluster.
    #[arg(long)]
    pub remove_max: Option<f64>,
    #[arg(long, value_enum)]
    pub threshold_mode: Option<ModeArg>,
    /// Iterative threshold step as a fraction of the density std deviation.
    #[arg(long)]
    pub iter_step_frac: Option<f64>,
    /// Search neighbors inside each cluster only.
    #[arg(long)]
    pub per_cluster_knn: bool,
    #[arg(long)]
    pub vol_floor: Option<f64>,
    /// Treat every point as non-ground.
    #[arg(long)]
    pub no_ground: bool,
    #[arg(long)]
    pub ground_band: Option<f64>,
    #[arg(long)]
    pub ground_eps: Option<f64>,
    #[arg(long)]
    pub ground_max_slope: Option<f64>,
    #[arg(long)]
    pub ground_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Removed-index JSON (default: `<out stem>.removed.json`).
    #[arg(long)]
    pub removed: Option<PathBuf>,
    /// Run report (default: `<out stem>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Motion-label sidecar (JSON array of 0/1) for a confusion block.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pcd-binary")]
    pub format: FormatArg,
    #[command(flatten)]
    pub params: ParamArgs,
}

/// Metric options shared by `eval` and `bench`.
#[derive(Debug, Args, Default)]
pub struct MetricArgs {
    /// Drop floor points from both clouds before measuring.
    #[arg(long)]
    pub strip_ground: bool,
    /// Drop ceiling points from both clouds before measuring.
    #[arg(long)]
    pub strip_ceiling: bool,
    #[arg(long)]
    pub emd_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Removed-index JSON from `filter`; requests a confusion block.
    #[arg(long)]
    pub removed: Option<PathBuf>,
    /// Labels of the unfiltered map: a 0/1 JSON sidecar or a labeled cloud.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output path; stdout when omitted or `-`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    K,
    Clusters,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Map to filter; a scene is generated when omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Reference map; required with `--in`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Scenario JSON used when `--in` is omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dynahull: {e}");
            e.exit_code()
        }
    }
}
