use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "regime-ogarch", version, about = "Regime-switching OGARCH covariance forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic panel as CSV plus a JSON sidecar.
    Simulate(SimulateArgs),
    /// Fit one model and print its parameters as JSON.
    Fit(FitArgs),
    /// Forecast the covariance path from the end of the data.
    Forecast(ForecastArgs),
    /// Rolling out-of-sample backtest; writes a result bundle.
    Backtest(BacktestArgs),
    /// Covariance distance to the true block covariances for several component counts.
    Sweep(SweepArgs),
    /// Loss tables, Diebold-Mariano and likelihood-ratio tests from result bundles.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    SquareWave,
    #[value(name = "regime-10d")]
    Regime10d,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the preset's sample length.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(short, long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with a date column followed by one column per asset.
    pub data: PathBuf,
    /// Cells hold prices rather than log returns.
    #[arg(long)]
    pub prices: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Garch,
    Mrs,
    Ogarch,
    Mrsogarch,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub model: FitModel,
    /// Asset to fit for the univariate models (default: first column).
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub components: usize,
    /// Use only the last R rows (default: all).
    #[arg(long)]
    pub window: Option<usize>,
    /// Fix the regime means at zero.
    #[arg(long)]
    pub zero_means: bool,
    #[arg(short, long = "out")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PanelModel {
    Ewma,
    Ogarch,
    Mrsogarch,
}

/// Settings shared by the panel commands. Flags override the config file.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// JSON file mirroring the backtest configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<PanelModel>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// In-sample window length R.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub expanding: bool,
    /// Normalize with whole-sample statistics (looks ahead).
    #[arg(long)]
    pub full_sample_normalization: bool,
    /// Drop unmodelled components instead of using their eigenvalues.
    #[arg(long)]
    pub truncate: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub zero_means: bool,
    /// Use the single-regime fit in both regimes.
    #[arg(long)]
    pub lock_degenerate: bool,
    #[arg(long)]
    pub refit_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long = "out")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Distance between forecast origins.
    #[arg(long)]
    pub step: Option<usize>,
    /// Crisis sub-period as START:END date labels; repeatable.
    #[arg(long, value_name = "START:END")]
    pub crisis: Vec<String>,
    /// Bundle directory (default: the config's output_dir, else `bundle`).
    #[arg(short, long = "out")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Panel written by `simulate --preset regime-10d`; its sidecar holds the truth.
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub step: Option<usize>,
    /// Comma-separated component counts (default: all).
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Bundles to tabulate.
    pub bundles: Vec<PathBuf>,
    /// Diebold-Mariano test of bundle A against bundle B.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub dm: Option<Vec<PathBuf>>,
    /// Likelihood-ratio tests of a switching bundle against a single-regime bundle.
    #[arg(long, num_args = 2, value_names = ["SWITCHING", "SINGLE"])]
    pub lr: Option<Vec<PathBuf>>,
    /// DM horizon (default: the first bundle's forecast horizon).
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Print JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}
