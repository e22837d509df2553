//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Parser)]
#[command(name = "mmrd", version, about = "Evidence-aware multimodal rumor detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON experiment config; keys left out take the preset's values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Encoder tier for text, image and captions.
    #[arg(long, global = true, value_enum)]
    pub encoders: Option<EncoderTier>,
    /// Base values the config file is layered on.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Name of the run directory; derived from command, seed and inputs when omitted.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderTier {
    Toy,
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-scale recipe (lr 5e-5, batch 32, 8 epochs).
    Full,
    /// Small dimensions and a longer, faster-learning recipe for one CPU core.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaptionerChoice {
    SyntheticOracle,
    Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignalChoice {
    /// Mismatch and stamp mark rumors, restating evidence marks non-rumors.
    All,
    /// The stamp is the only rumor signal.
    ForgeryOnly,
}

/// Where training data comes from.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// JSONL dataset, split by the configured ratios; falls back to the
    /// config's dataset, then to a generated synthetic set.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Separate validation set; the whole dataset then goes to training
    /// unless a test set is missing.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Separate held-out test set.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Overrides the number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fill missing captions and write `<name>.captioned.jsonl` next to the input.
    Prepare {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        captioner: Option<CaptionerChoice>,
    },
    /// Train, pick a checkpoint and evaluate it on the test split.
    Train(DataArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train ablated variants; `--flag all` runs all seven.
    Ablate {
        #[arg(long = "flag", required = true)]
        flags: Vec<String>,
        /// Also train the unablated model for comparison.
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Retrain once per evidence count and tabulate test accuracy.
    SweepEvidence {
        #[arg(long, default_value_t = 1)]
        k_min: usize,
        #[arg(long, default_value_t = 9)]
        k_max: usize,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write fused features of every sample as CSV.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Print the metrics table and write the confusion matrix.
    Report { metrics: PathBuf },
    /// Generate a synthetic dataset with PNG images.
    SynthData {
        #[arg(long, default_value_t = 63)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SignalChoice::All)]
        signals: SignalChoice,
        /// Store ground-truth captions instead of leaving them to `prepare`.
        #[arg(long)]
        captions: bool,
        #[arg(long, default_value = "data.jsonl")]
        name: String,
    },
    /// Dump the log-amplitude spectrum of an image as channel-major CSV.
    Spectrum { image: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare { .. } => "prepare",
            Command::Train(_) => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::SweepEvidence { .. } => "sweep-evidence",
            Command::ExportFeatures { .. } => "export-features",
            Command::Report { .. } => "report",
            Command::SynthData { .. } => "synth-data",
            Command::Spectrum { .. } => "spectrum",
        }
    }
}
