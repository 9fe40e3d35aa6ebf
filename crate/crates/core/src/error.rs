//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by tokenizer, codec, training, and analysis operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a precondition (shape, range, emptiness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A token id is outside the codebook range.
    #[error("invalid token id {id}: codebook size is {codebook_size}")]
    InvalidToken { id: u32, codebook_size: u32 },

    /// A configuration value is inconsistent or unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values appeared where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A token-stream file failed to parse.
    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    /// A token-stream file declares a format version we do not understand.
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),

    /// The stream was produced by a different model than the one loaded.
    #[error("model fingerprint mismatch: stream has {stream}, checkpoint has {checkpoint}")]
    ModelIdMismatch { stream: String, checkpoint: String },

    /// Dataset or image ingestion failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Training produced a non-finite loss; carries the diagnostics at the
    /// failing step.
    #[error("training aborted at step {step}: non-finite loss (lr={lr:.3e}, kept_length={kept_length})")]
    TrainDiverged { step: usize, lr: f64, kept_length: usize },

    /// A checkpoint file is missing or malformed.
    #[error("checkpoint error at {path:?}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn ingestion(msg: impl Into<String>) -> Self {
        Error::Ingestion(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStream(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
