use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("run directory {0} already exists; choose another experiment_id or --out")]
    RunExists(PathBuf),
    #[error("stage `{1}` already completed in {0}; pass --rerun to repeat it")]
    StageDone(PathBuf, String),
    #[error("stage `{stage}` needs `{missing}` to have completed first")]
    MissingStage { stage: String, missing: String },
    #[error("mode collapse: discriminator loss stayed below {epsilon} for {window} steps, first at step {step} (epoch {epoch})")]
    ModeCollapse { epsilon: f64, window: usize, step: u64, epoch: usize },
    #[error(transparent)]
    Core(#[from] privtranslate::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for anything the user can fix by changing the invocation, 1 for
    /// failures while a stage was running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Usage(_)
            | CliError::RunExists(_)
            | CliError::StageDone(..)
            | CliError::MissingStage { .. } => 2,
            CliError::Core(privtranslate::Error::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
