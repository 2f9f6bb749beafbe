use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, indices).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An invalid model or strategy configuration.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Errors raised while decoding a model file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected GFM1, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated file while reading {0}")]
    Truncated(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("tensor {name}: unsupported dtype tag {tag}")]
    Dtype { name: String, tag: u8 },
    #[error("tensor {name}: shape {found:?} does not match config shape {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} is missing")]
    Missing(String),
    #[error("tensor {0} appears more than once")]
    Duplicate(String),
    #[error("unknown tensor {0}")]
    Unknown(String),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
