//! Command implementations behind the `suffixbench` binary.

pub mod args;
mod error;
mod evaluate;
mod ingest;
mod report;
mod run_config;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use suffixbench_core::event_log::{content_hash, read_canonical, EventLog};

pub use error::{CliError, CliResult};
pub use evaluate::cmd_evaluate;
pub use ingest::{cmd_ingest, HISTOGRAM_FILE, LOG_FILE, VOCAB_FILE};
pub use report::{cmd_report, COMBINED_HEADER};
pub use run_config::{resolve_seed, RunConfig, SEED_ENV};
pub use synth::cmd_synth;
pub use train::{cmd_train, run_dir_name};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RUN_CONFIG_FILE: &str = "run.cfg";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const TRAIN_MANIFEST: &str = "train.txt";
pub const EVAL_MANIFEST: &str = "eval.txt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.csv";
pub const EVAL_CONFIG_FILE: &str = "eval.cfg";

/// A canonical log with its content hash and a default dataset name.
pub struct LoadedLog {
    pub log: EventLog,
    pub hash: String,
    pub name: String,
}

/// Reads an ingested directory or a canonical log file.
pub fn load_log(path: &Path) -> CliResult<LoadedLog> {
    let file: PathBuf = if path.is_dir() { path.join(LOG_FILE) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file)
        .map_err(|e| CliError::NoData(format!("cannot read log {}: {e}", file.display())))?;
    let log = read_canonical(&mut bytes.as_slice())?;
    if log.is_empty() {
        return Err(CliError::NoData(format!("log {} has no traces", file.display())));
    }
    let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).map(str::to_string);
    let name = if path.is_dir() {
        stem(path)
    } else if stem(path).as_deref() == Some("log") {
        path.parent().and_then(stem)
    } else {
        stem(path)
    }
    .unwrap_or_else(|| "log".to_string());
    Ok(LoadedLog {
        log,
        hash: content_hash(&bytes),
        name,
    })
}

/// Dispatches a parsed command line.
pub fn run(cli: args::Cli) -> CliResult<()> {
    match cli.command {
        args::Command::Ingest(a) => cmd_ingest(&a),
        args::Command::Train(a) => cmd_train(&a).map(|_| ()),
        args::Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        args::Command::Report(a) => cmd_report(&a).map(|_| ()),
        args::Command::Synth(a) => cmd_synth(&a),
    }
}
