//! `fstripe`: structure-informed linear attention from the command line.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

// Byte-accurate peak measurements for `bench`.
#[global_allocator]
static ALLOC: fstripe_core::alloc_track::TrackingAllocator =
    fstripe_core::alloc_track::TrackingAllocator::system();

#[derive(Parser)]
#[command(name = "fstripe", version, about = "Structure-informed positional encoding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeArg {
    None,
    Sff,
    Rff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureMapArg {
    Elu,
    Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SideArg {
    Q,
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Copy,
    ChordCue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BinarizeArg {
    Threshold,
    ThresholdWithMerge,
}

#[derive(Subcommand)]
enum Command {
    /// Dump a positional feature matrix as JSON.
    Features(FeaturesArgs),
    /// Run attention over Q/K/V (and grids) read from JSON.
    Attend(AttendArgs),
    /// Wall-clock and allocation scaling of exact vs linear attention.
    Bench(BenchArgs),
    /// Stochastic-feature approximation error against the closed form.
    ApproxError(ApproxErrorArgs),
    /// Train the desk-scale transformer on a synthetic task.
    Train(TrainArgs),
    /// Score a prediction pianoroll against a target.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct FeaturesArgs {
    /// Linear grid length (alternative to --grid/--labels).
    #[arg(long)]
    pub length: Option<usize>,
    /// Grid JSON file.
    #[arg(long, conflicts_with = "length")]
    pub grid: Option<PathBuf>,
    /// Label-alignment JSON file (upsampled to the sixteenth clock).
    #[arg(long, conflicts_with_all = ["length", "grid"])]
    pub labels: Option<PathBuf>,
    /// Level selection for --labels, comma separated, mask order.
    #[arg(long, value_delimiter = ',')]
    pub mask: Option<Vec<usize>>,
    /// Sinusoid parameters as JSON (alternative to seeded init).
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub n_f: Option<usize>,
    /// Realization count for --pe sff.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, value_enum, default_value = "q")]
    pub side: SideArg,
    #[arg(long, value_enum, default_value = "rff")]
    pub pe: PeArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AttendArgs {
    /// Request JSON: q/k/v matrices plus optional grids.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "rff")]
    pub pe: PeArg,
    #[arg(long)]
    pub causal: bool,
    #[arg(long, value_enum, default_value = "elu")]
    pub feature_map: FeatureMapArg,
    /// Also emit exact softmax attention and its logits.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated subset of {exact, fstripe}.
    #[arg(long, value_delimiter = ',', default_values = ["exact", "fstripe"])]
    pub methods: Vec<String>,
    /// Strictly increasing sequence lengths (at least two).
    #[arg(long, value_delimiter = ',', default_values = ["512", "4096"])]
    pub lengths: Vec<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub value_dim: Option<usize>,
    /// Worker threads for the per-dimension feature build (default 1:
    /// fully single-threaded, which keeps the scaling ratios readable).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Estimated-bytes cap for the exact method; bigger runs become
    /// status rows instead of allocations.
    #[arg(long)]
    pub max_exact_bytes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ApproxErrorArgs {
    /// Realization counts to sweep.
    #[arg(long, value_delimiter = ',', default_values = ["16", "64", "256", "1024"])]
    pub r_list: Vec<usize>,
    /// Independent draws per realization count.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "chord-cue")]
    pub task: TaskArg,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Distinct chord identities for the chord-cue task.
    #[arg(long)]
    pub chords: Option<usize>,
    #[arg(long, value_enum, default_value = "rff")]
    pub pe: PeArg,
    #[arg(long, value_enum, default_value = "elu")]
    pub feature_map: FeatureMapArg,
    /// Structural levels to keep, comma separated, mask order.
    #[arg(long, value_delimiter = ',')]
    pub level: Option<Vec<usize>>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub no_curriculum: bool,
    #[arg(long, value_enum, default_value = "threshold")]
    pub binarize: BinarizeArg,
    #[arg(long)]
    pub binarize_threshold: Option<f64>,
    #[arg(long)]
    pub merge_gap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint path.
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Per-epoch CSV log path.
    #[arg(long)]
    pub out_log: PathBuf,
    /// Optional path for the untrained initialization checkpoint.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Target pianoroll JSON.
    #[arg(long)]
    pub target: PathBuf,
    /// Prediction pianoroll JSON.
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long, default_value = "piece")]
    pub piece_id: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Features(args) => commands::features(args),
        Command::Attend(args) => commands::attend(args),
        Command::Bench(args) => commands::bench(args),
        Command::ApproxError(args) => commands::approx_error(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
    }
}
