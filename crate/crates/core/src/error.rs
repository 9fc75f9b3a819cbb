use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown tile L{level}/r{row}_c{col}")]
    UnknownTile { level: usize, row: usize, col: usize },

    #[error("sequence length {len} exceeds configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("provider returned {got} scores, expected {expected} for level {level}")]
    ScoreLength {
        level: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {stage} at layer {layer}, head {head}")]
    NonFinite {
        stage: &'static str,
        layer: usize,
        head: usize,
    },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
