use std::io;

/// Errors raised by the simulator and estimators.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("bit count {len} is not a multiple of {bits_per_symbol}")]
    BitLength { len: usize, bits_per_symbol: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("activation cache does not belong to this model")]
    StaleActivations,

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Vec<crate::training::EpochRecord>,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
