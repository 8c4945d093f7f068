use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use das_core::data::DEFAULT_MIN_COUNT;
use das_core::model::AttentionMode;
use das_core::train::TrainMode;

#[derive(Debug, Parser)]
#[command(name = "das", version, about = "Dense video captioning by division and summarization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a summarizer (or the TA segment captioner) on a proposal dataset.
    Train(TrainArgs),
    /// Caption every segment of every proposal with a TA checkpoint.
    CaptionSegments(CaptionArgs),
    /// Produce one sentence per proposal.
    Summarize(SummarizeArgs),
    /// Score predictions against ground truth over the IoU thresholds.
    Eval(EvalArgs),
    /// Finite-difference check of every model gradient on a tiny config.
    Gradcheck(GradcheckArgs),
    /// Score one candidate sentence against references.
    Metrics(MetricsArgs),
    /// Write a synthetic proposal dataset.
    Synth(SynthArgs),
    /// Toy-scale ablations and sweeps on synthetic data.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Proposal dataset (JSON lines).
    pub data: PathBuf,
    /// Validation dataset; the training set is used when omitted.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// TOML file with [model] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// xent or scst.
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// SA, HA or TA.
    #[arg(long)]
    pub attention: Option<AttentionMode>,
    /// Starting checkpoint; required for scst.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    /// Segments per proposal.
    #[arg(long)]
    pub nm: Option<usize>,
    /// Words kept per segment sentence.
    #[arg(long)]
    pub nk: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch TSV log; defaults to `<out>.log.tsv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 25)]
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SummaryMode {
    #[value(name = "SA")]
    Sa,
    #[value(name = "HA")]
    Ha,
    #[value(name = "TA")]
    Ta,
    #[value(name = "DM-ave")]
    DmAve,
    #[value(name = "DM-best")]
    DmBest,
}

impl SummaryMode {
    pub fn label(self) -> &'static str {
        match self {
            SummaryMode::Sa => "SA",
            SummaryMode::Ha => "HA",
            SummaryMode::Ta => "TA",
            SummaryMode::DmAve => "DM-ave",
            SummaryMode::DmBest => "DM-best",
        }
    }
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub mode: SummaryMode,
    /// Required for every mode except DM-ave.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Aggregation {
    /// Mean over every overlapping (prediction, event) pair.
    Average,
    /// Best event per prediction, mean over predictions.
    Best,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions (JSON lines with video_id, t_start, t_end, sentence).
    pub predictions: PathBuf,
    /// Ground truth: JSON lines with video_id, t_start, t_end and
    /// `references` or `sentence`; proposal datasets qualify.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = Aggregation::Average)]
    pub aggregation: Aggregation,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckMode {
    #[value(name = "SA")]
    Sa,
    #[value(name = "HA")]
    Ha,
    #[value(name = "TA")]
    Ta,
    #[value(name = "all")]
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// TOML file whose [model] table replaces the tiny config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CheckMode::All)]
    pub mode: CheckMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the uniform noise added to the initialization.
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_d: f64,
    /// Scales backprop gradients before comparing (negative control).
    #[arg(long, hide = true)]
    pub inject_bug: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub candidate: String,
    #[arg(long = "reference", required = true)]
    pub references: Vec<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 24)]
    pub proposals: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a held-out split (one proposal in `--holdout-every`).
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub holdout_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// TA, DM-ave, DM-best, SA, HA and the fusion ablations.
    Modes,
    Lambda,
    Segments,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    /// TOML file with [model], [train], [data] and top-level options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides both the training and the corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.1, 1.0])]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
    pub segments: Vec<usize>,
    /// JSON rows path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
