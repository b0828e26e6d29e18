use std::io;

use thiserror::Error;

pub type Result<T, E = BmfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BmfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("tile has an empty pattern or usage, density is undefined")]
    EmptyTile,

    #[error("coherence test inapplicable: {side} side has {ones} ones, at least 2 are needed")]
    CoherenceInapplicable { side: &'static str, ones: usize },

    #[error("eta needs at least two columns, got {0}")]
    TooFewColumns(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tile is fully shadowed by the other tiles (zero exclusive area)")]
    ZeroExclusiveArea,

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("empty matrix after binarization: {0}")]
    EmptyMatrix(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> BmfError {
    BmfError::InvalidArgument(msg.into())
}
