use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "netar", version, about = "Network autoregressive models: simulate, fit, forecast and replicate")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct GlobalOpts {
    /// Random seed.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for replicate and bootstrap parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a panel from a model spec; writes long-format CSV.
    Simulate(SimulateArgs),
    /// Spectral radius of the companion matrix of a model spec.
    Stability(StabilityArgs),
    /// Estimate a NAR model on panel data.
    Fit(FitArgs),
    /// One-step-ahead forecasts from a fitted model.
    Forecast(ForecastArgs),
    /// Lag order selection by BIC.
    Select(SelectArgs),
    /// Residual bootstrap percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Run a Monte-Carlo scenario file.
    Replicate(ReplicateArgs),
    /// Inverse-distance weight matrices from coordinates.
    GeoWeights(GeoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Iid,
    Sar,
    StudentT,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Model spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub t_len: usize,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = ErrorKind::Iid)]
    pub error: ErrorKind,
    /// Error variance (iid) or innovation variance (sar, student-t scale).
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// SAR coefficient for `sar` and the scale of `student-t`.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Degrees of freedom for `student-t`.
    #[arg(long, default_value_t = 4.0)]
    pub nu: f64,
    /// SAR matrix CSV (defaults to W).
    #[arg(long)]
    pub phi: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct StabilityArgs {
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapArg {
    Error,
    ForwardFill,
    DropNode,
}

/// Panel file and weight matrix shared by the estimation commands.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Weight matrix CSV (no header).
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long, default_value = "t")]
    pub time_col: String,
    #[arg(long, default_value = "node")]
    pub node_col: String,
    #[arg(long, default_value = "value")]
    pub value_col: String,
    /// Covariate columns (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_enum, default_value_t = GapArg::Error)]
    pub gap_policy: GapArg,
    /// Take logs of the response.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArg {
    Ols,
    RidgeOls,
    Gls,
    RidgeGls,
    Egls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovArg {
    Sar,
    Factor,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    pub q1: usize,
    #[arg(long, default_value_t = 1)]
    pub q2: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Ols)]
    pub estimator: EstimatorArg,
    /// Covariance family for `egls`.
    #[arg(long, value_enum, default_value_t = CovArg::Sar)]
    pub cov: CovArg,
    /// SAR matrix CSV for `--cov sar` (defaults to W).
    #[arg(long)]
    pub phi: Option<PathBuf>,
    /// Largest factor count for `--cov factor`.
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Error covariance CSV for `gls` and `ridge-gls`.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Common ridge penalty (default `T^-0.6`).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Repeat the EGLS covariance and GLS steps until convergence.
    #[arg(long)]
    pub iterate: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of leading periods used for fitting; the rest are forecast one
    /// step ahead from realized lags. Without it the whole panel is used and
    /// the next period is forecast.
    #[arg(long)]
    pub train: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 3)]
    pub qmax: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BootEstimatorArg {
    Ols,
    EglsSar,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub q1: usize,
    #[arg(long, default_value_t = 1)]
    pub q2: usize,
    #[arg(long, value_enum, default_value_t = BootEstimatorArg::Ols)]
    pub estimator: BootEstimatorArg,
    #[arg(long)]
    pub phi: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GeoArgs {
    /// CSV with columns `node,lat,lon` (degrees).
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long, default_value_t = netar::geo::DEFAULT_CUTOFF_KM)]
    pub cutoff_km: f64,
    /// Where to write the uncapped matrix Phi (CSV output only).
    #[arg(long)]
    pub phi_out: Option<PathBuf>,
}
