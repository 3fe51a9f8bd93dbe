use suffixbench_core::config::ConfigError;
use suffixbench_core::evaluation::EvalError;
use suffixbench_core::event_log::LogError;
use suffixbench_core::models::ModelError;
use suffixbench_core::synthetic::SynthError;
use suffixbench_core::training::TrainError;

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Nothing to work on: empty log, no runs, missing split (exit 1).
    #[error("{0}")]
    NoData(String),
    /// Checkpoint and data disagree (exit 3).
    #[error("{0}")]
    Integrity(String),
    /// Anything else that stopped the command (exit 1).
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NoData(_) | CliError::Failed(_) => 1,
            CliError::Integrity(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Empty => CliError::NoData(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::UnknownArchitecture(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::NoBatches => CliError::NoData(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Empty => CliError::NoData(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) | SynthError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}
