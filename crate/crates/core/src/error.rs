use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("shape mismatch: {what} is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    ShapeMismatch {
        what: &'static str,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },

    #[error("mask has no true pixels")]
    EmptyMask,

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate triplet id `{0}`")]
    DuplicateTripletId(String),

    #[error("malformed record at {}:{line}: {reason}", path.display())]
    Record { path: PathBuf, line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn decode(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Decode {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
