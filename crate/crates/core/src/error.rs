use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is singular or ill-conditioned (condition number estimate {cond:e})")]
    Singular { cond: f64 },

    #[error("actnorm layer `{0}` used in training before data-dependent initialization")]
    Uninitialized(String),

    #[error("alignment needs at least as many frames as tokens: {tokens} tokens, {frames} frames")]
    AlignmentTooShort { tokens: usize, frames: usize },

    #[error("audio too short: {got} samples, need at least {min}")]
    AudioTooShort { got: usize, min: usize },

    #[error("unsupported wav `{path}`: {msg}")]
    WavFormat { path: PathBuf, msg: String },

    #[error("text is empty after normalization: {0:?}")]
    EmptyText(String),

    #[error("unknown token id {0}")]
    UnknownToken(usize),

    #[error("speaker vector has zero norm")]
    ZeroSpeakerVector,

    #[error("unknown speaker `{name}`; known speakers: {known}")]
    UnknownSpeaker { name: String, known: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Hound(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
