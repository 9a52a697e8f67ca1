//! Error type shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Network construction rejected the layer dimension list.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// An input's shape does not match what the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one row received none.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// Mining or loss evaluation was asked to work on an empty term set.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// A selection index points outside the term set it selects from.
    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    /// A non-finite value surfaced where the computation requires finite ones.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration value is outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// ROC-AUC is undefined for the given label set.
    #[error("undefined AUC: {0}")]
    UndefinedAuc(String),

    /// A dataset file failed to parse; `line` is 1-based and counts the
    /// header row if one is present.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A scorer was asked for a quantity its mode does not retain.
    #[error("scoring mode error: {0}")]
    Mode(String),

    /// A model file is malformed, truncated, corrupted, or from an
    /// unsupported format version.
    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
