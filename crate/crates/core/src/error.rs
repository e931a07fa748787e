use thiserror::Error;

pub type Result<T, E = SoupError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SoupError {
    /// Bad task configuration, or an input that does not fit the task.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scorer request or response that violates the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The scorer or encoder could not be reached. Safe to retry.
    #[error("transport error: {0}")]
    Transport(String),

    /// Invalid arguments to a numeric or retrieval operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed embedding cache file.
    #[error("format error: {0}")]
    Format(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SoupError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, SoupError::Transport(_))
    }
}
