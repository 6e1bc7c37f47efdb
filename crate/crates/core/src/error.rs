use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action {action} ({reason})")]
    InvalidAction { action: usize, reason: &'static str },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("episode already terminated")]
    Terminal,
    #[error("position is terminal; nothing to solve")]
    TerminalPosition,
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss in {stage} at step {step}: {detail}")]
    Diverged { stage: &'static str, step: u64, detail: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
