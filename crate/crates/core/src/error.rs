use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("NaN input to {0}")]
    NaN(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("target vocabulary size {requested} is too small; minimum feasible size is {minimum}")]
    VocabularyTooSmall { requested: usize, minimum: usize },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("state does not belong to this model: {0}")]
    StateMismatch(String),

    #[error("session already finalized")]
    Finalized,

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss for utterance {0}")]
    NonFiniteLoss(String),

    #[error("rescored hypothesis score {rescored} differs from search score {searched}")]
    ScoreMismatch { searched: f64, rescored: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed archive: {0}")]
    Archive(String),

    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("post-condition failed: {0}")]
    CheckFailed(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a failure
    /// while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::VocabularyMismatch(_)
                | Error::VocabularyTooSmall { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
