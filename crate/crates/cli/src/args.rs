use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "suffixbench", version, about = "Suffix and remaining-time prediction benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a CSV or XES log into the canonical binary form.
    Ingest(IngestArgs),
    /// Split, train and checkpoint one or more architectures.
    Train(TrainArgs),
    /// Generate suffixes for the evaluation split and write reports.
    Evaluate(EvaluateArgs),
    /// Combine the reports of several runs.
    Report(ReportArgs),
    /// Sample a synthetic log as CSV.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Xes,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "case_id")]
    pub case_column: String,
    #[arg(long, default_value = "activity")]
    pub activity_column: String,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_column: String,
}

/// Flags that override the config file. Keys of the config file use the
/// flag names with `_` instead of `-`.
#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Ingested directory or its `log.bin`.
    #[arg(long)]
    pub log: PathBuf,
    /// Architecture tag, comma-separated list or `all`.
    #[arg(long)]
    pub arch: Option<String>,
    /// Falls back to the config file, then `SUFFIXBENCH_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory that receives one sub-directory per run.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Dataset name used in run directories and reports.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding `train.txt` and `eval.txt` manifests to reuse.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Architectures trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub w_act: Option<f64>,
    #[arg(long)]
    pub w_time: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub open_loop_prob: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ingested directory or its `log.bin`.
    #[arg(long)]
    pub log: PathBuf,
    /// Run directory or a `model.ckpt` inside one.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory with the `eval.txt` manifest; defaults to the run directory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Count the duration predicted with `[EOS]` towards remaining time.
    #[arg(long)]
    pub include_eos_time: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory whose sub-directories hold `report.csv` files.
    #[arg(long)]
    pub runs: PathBuf,
    /// Combined CSV; defaults to `<runs>/combined.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Three fixed variants, 8 activities.
    Memorization,
    /// Geometric loop giving a heavy length tail.
    Skewed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub preset: Option<Preset>,
    /// Process description as `key = value` text.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Loop continuation probability of the skewed preset.
    #[arg(long, default_value_t = 0.6)]
    pub loop_p: f64,
    #[arg(long, default_value_t = 200)]
    pub traces: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
}
