use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("negative sampling infeasible: {0}")]
    SamplingInfeasible(String),

    #[error("no adjoint registered for primitive `{0}`")]
    UnregisteredPrimitive(&'static str),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
