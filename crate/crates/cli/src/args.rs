use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cf3d", version, about = "Multimodal 3D channel fingerprint construction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic urban scenario.
    Generate(GenerateArgs),
    /// Simulate the ground grid and aerial CSI tuples of a scenario.
    Sample(SampleArgs),
    /// Train MMR, Corr-MMF and CSI-R in turn.
    Train(TrainArgs),
    /// MAE/RMSE of the learned pipeline and the classical interpolators.
    Eval(EvalArgs),
    /// Retrain over a grid of correlation weights and seeds.
    Sweep(SweepArgs),
    /// RSS heatmaps at horizontal planes.
    Plot(PlotArgs),
    /// Relative wall clock of each method over random queries.
    Bench(BenchArgs),
    /// Rerun a command from the config.json receipt it wrote.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Narrow networks sized for one CPU core.
    Desk,
    /// Full-width networks with the original training schedules.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Simulated ground truth.
    Truth,
    /// Predictions of a trained pipeline.
    Model,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub density: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n_aerial: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Hyperparameter overrides shared by `train` and `sweep`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Full pipeline config as JSON; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma_tam: Option<f64>,
    #[arg(long)]
    pub epochs_mmf: Option<usize>,
    #[arg(long)]
    pub epochs_mmr: Option<usize>,
    #[arg(long)]
    pub epochs_csi: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Directory written by `sample`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Directory written by `train`; needed for `mmf`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated subset of mmf,idw,nn,kriging,gpr.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// Share of the store handed to the interpolators.
    #[arg(long, default_value_t = 0.05)]
    pub fraction: f64,
    /// Score at the interpolators' own sample positions instead of the test split.
    #[arg(long)]
    pub at_samples: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,10")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Required for `--source model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Source::Truth)]
    pub source: Source,
    /// Heights of the horizontal planes in metres.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    pub z: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.05)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub receipt: PathBuf,
    /// Where to write; defaults to the receipt's own output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
