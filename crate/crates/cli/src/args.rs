use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "drivecast",
    version,
    about = "Forecast driver-vehicle dynamics from the recent past and the road ahead"
)]
pub struct Cli {
    /// Master seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; for track-fit and tune a `.json` path names the
    /// primary output file instead.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file of flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit the track splines to sampled margins.
    TrackFit(TrackFitArgs),
    /// Simulate laps of a synthetic scenario.
    Gen(GenArgs),
    /// Filter, downsample, split, normalize and window recorded laps.
    Prepare(PrepareArgs),
    /// Train a forecaster on a prepared dataset.
    Train(TrainArgs),
    /// Bayesian hyperparameter search.
    Tune(TuneArgs),
    /// Repeated training over fresh lap splits.
    Crossval(CrossvalArgs),
    /// Score a model and export traces, windows and per-feature errors.
    Evaluate(EvaluateArgs),
    /// Export per-lap prediction tables.
    Predict(PredictArgs),
    /// Time single-window inference.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrackFit(_) => "track-fit",
            Command::Gen(_) => "gen",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Tune(_) => "tune",
            Command::Crossval(_) => "crossval",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::Bench(_) => "bench",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrackFitArgs {
    /// Margins CSV with header `side,x,y,z`.
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// Knot spacing along the centerline (m).
    #[arg(long, default_value_t = 20.0)]
    pub knot_spacing: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    /// baseline, new_driver or reversed_track.
    #[arg(long, default_value = "baseline")]
    pub scenario: String,
    /// Number of laps.
    #[arg(long, default_value_t = 36)]
    pub laps: usize,
    /// Recording rate (Hz).
    #[arg(long, default_value_t = 100.0)]
    pub fs: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    /// Lap manifest written by `gen`.
    #[arg(long, value_name = "JSON")]
    pub manifest: PathBuf,
    /// Fitted track; defaults to the manifest's track entry (a margins CSV
    /// is fitted on the fly).
    #[arg(long, value_name = "JSON")]
    pub track: Option<PathBuf>,
    /// Past steps.
    #[arg(long, alias = "t-p", default_value_t = 21)]
    pub tp: usize,
    /// Forecast horizon (steps).
    #[arg(long, alias = "t-f", default_value_t = 30)]
    pub tf: usize,
    /// Road look-ahead distance (m).
    #[arg(long, alias = "d-r", default_value_t = 150.0)]
    pub dr: f64,
    /// Road-ahead sample points.
    #[arg(long, alias = "p-r", default_value_t = 50)]
    pub pr: usize,
    /// Train,validation,test lap ratio, scaled to the lap count.
    #[arg(long, default_value = "31,4,1")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct HpArgs {
    /// Dropout rate.
    #[arg(long, default_value_t = 0.4116)]
    pub r: f64,
    /// Loss weight of the secondary features.
    #[arg(long, default_value_t = 0.3138)]
    pub w: f64,
    /// Total hidden units.
    #[arg(long, default_value_t = 80)]
    pub u_ed: usize,
    /// Encoder share of the hidden units.
    #[arg(long, default_value_t = 0.4)]
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// The complete two-phase schedule.
    Full,
    /// Shortened phases for desk-scale runs.
    Small,
    /// A few epochs, for smoke tests.
    Tiny,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct BudgetArgs {
    #[arg(long, value_enum, default_value_t = Budget::Full)]
    pub budget: Budget,
    /// Override the phase-1 epoch cap.
    #[arg(long)]
    pub phase1_epochs: Option<usize>,
    /// Override the phase-2 epoch cap.
    #[arg(long)]
    pub phase2_epochs: Option<usize>,
    /// Override both early-stopping patiences.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on every n-th training window.
    #[arg(long, default_value_t = 1)]
    pub train_stride: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Search box; only `default` is defined.
    #[arg(long, default_value = "default")]
    pub space: String,
    #[arg(long, default_value_t = 2)]
    pub n_random: usize,
    #[arg(long, default_value_t = 10)]
    pub n_bayes: usize,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hp: HpArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Repeat `i` uses seed `seed + i * seed_stride`.
    #[arg(long, default_value_t = 1)]
    pub seed_stride: u64,
    #[arg(long, default_value = "31,4,1")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// The trained network.
    Model,
    /// Repeat the last observed sample.
    Hold,
    /// Return the ground truth (a pipeline check).
    Oracle,
}

/// Where evaluation windows come from.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Prepared dataset directory.
    #[arg(long, conflicts_with = "manifest")]
    pub data: Option<PathBuf>,
    /// Split of the prepared dataset.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Raw lap manifest, windowed with the model's statistics.
    #[arg(long, value_name = "JSON")]
    pub manifest: Option<PathBuf>,
    /// Track for `--manifest`; defaults to the manifest's track entry.
    #[arg(long, value_name = "JSON")]
    pub track: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub source: DataArgs,
    #[arg(long, value_enum, default_value_t = PredictorKind::Model)]
    pub predictor: PredictorKind,
    /// Export the full prediction window at step k (repeatable).
    #[arg(long)]
    pub window_at: Vec<usize>,
    /// Lap of the exported windows; defaults to the first lap.
    #[arg(long)]
    pub lap: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: DataArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: DataArgs,
    #[arg(long, default_value_t = 40)]
    pub n_windows: usize,
    /// First window index within the lap.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Lap to time; defaults to the first lap.
    #[arg(long)]
    pub lap: Option<String>,
}
