use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Deep spike detection toolkit: train, compress and simulate the 1-D CNN,
/// then run detection and sorting on recordings.
#[derive(Debug, Parser)]
#[command(name = "dsd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic recording container.
    Synth(SynthArgs),
    /// Convert Wave_Clus text exports into a recording container.
    ConvertDataset(ConvertArgs),
    /// Extract detected 66-sample segments from a recording as CSV.
    Segments(SegmentsArgs),
    /// Train a network on a recording (or the built-in corpus).
    Train(TrainArgs),
    /// Prune, project and quantize a trained network.
    Compress(CompressArgs),
    /// Classify segments with the model's own forward pass.
    Classify(ClassifyArgs),
    /// Run segments through the cycle-counting pipeline simulator.
    Simulate(SimulateArgs),
    /// Channel selection, artefact removal, PCA and K-means with scoring.
    Sort(SortArgs),
    /// Summarise a compression report and sorting metrics.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Spike / artefact / noise segments (CNN2).
    Artefact,
    /// Neural / non-neural channel windows (CNN1).
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Active,
    Silent,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// easy1, easy2, difficult1 or difficult2.
    #[arg(long, default_value = "easy1")]
    pub bank: String,
    #[arg(long, default_value_t = 120.0)]
    pub duration: f64,
    /// Background noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 20.0)]
    pub spike_rate: f64,
    #[arg(long, default_value_t = 30.0)]
    pub artefact_rate: f64,
    /// Comma-separated channel kinds.
    #[arg(long, value_delimiter = ',', default_value = "active")]
    pub channels: Vec<Channel>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    /// Text file with the samples of one channel.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub spike_times: PathBuf,
    #[arg(long)]
    pub spike_class: PathBuf,
    /// Optional 0/1 artefact flag per spike.
    #[arg(long)]
    pub artefact_flags: Option<PathBuf>,
    #[arg(long, default_value_t = 24_000.0)]
    pub sample_rate: f64,
    /// Noise level; parsed from the data file name when omitted.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Spike times are already 0-based.
    #[arg(long)]
    pub zero_based: bool,
    /// Samples added to each spike time before peak alignment.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub peak_offset: i64,
    #[arg(long, default_value_t = 20)]
    pub align_search: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SegmentsArgs {
    #[arg(long)]
    pub recording: PathBuf,
    /// Output CSV, one segment per row.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write ground-truth labels (spike 0, artefact 1, noise 2), one
    /// per line, to this file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Detection threshold in noise units.
    #[arg(long, default_value_t = 4.0)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_factor: f64,
    #[arg(long, default_value_t = 5)]
    pub lr_period: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.8)]
    pub l2: f64,
    #[arg(long, default_value_t = 6)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Seed for initialisation, shuffling and dropout.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Recording container; the built-in synthetic corpus when omitted.
    #[arg(long)]
    pub recording: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Task::Artefact)]
    pub task: Task,
    /// Seed of the train/validation/test split.
    #[arg(long, default_value_t = 11)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Output directory for model.json, history.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompressArgs {
    /// Trained real-valued model.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 30)]
    pub max_prune_iters: usize,
    #[arg(long, default_value_t = 2)]
    pub filters_per_iter: usize,
    #[arg(long, default_value_t = 10)]
    pub min_filters: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.6,0.9")]
    pub targets: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    pub projection_candidates: usize,
    /// Fix the quantization width instead of sweeping 8 down to 2.
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long, default_value_t = 2)]
    pub min_bits: u32,
    #[arg(long, default_value_t = 8)]
    pub max_bits: u32,
    #[arg(long, default_value_t = 0.99)]
    pub accuracy_floor: f64,
    #[arg(long, default_value_t = 0.01)]
    pub stability_margin: f64,
    #[arg(long, default_value_t = 2)]
    pub fine_tune_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub projection_fine_tune_epochs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of segments, one per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Labels CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Projected, quantized model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for labels.csv, trace.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2.5e6)]
    pub frequency: f64,
    #[arg(long, default_value_t = 2)]
    pub handshake: u64,
    /// Calibrate the handshake cost so the delay equals this many cycles.
    #[arg(long)]
    pub calibrate: Option<u64>,
    /// Compute-cycle budget per block for resource allocation.
    #[arg(long, default_value_t = 30)]
    pub budget: u64,
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
    /// Explicit MACs per convolution block instead of allocation.
    #[arg(long, value_delimiter = ',')]
    pub conv_macs: Option<Vec<usize>>,
    /// Explicit mappers per fused block instead of allocation.
    #[arg(long, value_delimiter = ',')]
    pub mappers: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
pub struct SortArgs {
    /// One or more recording containers; each becomes a table row.
    #[arg(long, required = true)]
    pub recording: Vec<PathBuf>,
    /// Channel-selection network.
    #[arg(long)]
    pub cnn1: PathBuf,
    /// Artefact-removal network.
    #[arg(long)]
    pub cnn2: PathBuf,
    /// Output directory for table.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 2)]
    pub pca_components: usize,
    #[arg(long, default_value_t = 4.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 10)]
    pub match_tolerance: usize,
    /// Windows CNN1 must call neural before a channel is sorted.
    #[arg(long, default_value_t = 1)]
    pub min_neural_windows: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// report.json written by `compress`.
    #[arg(long)]
    pub compression: Option<PathBuf>,
    /// metrics.json written by `sort`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}
