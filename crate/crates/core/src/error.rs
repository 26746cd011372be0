use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading or writing tensor containers.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {}: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("malformed shard index {}: {reason}", path.display())]
    MalformedIndex { path: PathBuf, reason: String },
    #[error("tensor {name:?} appears in more than one shard")]
    DuplicateTensor { name: String },
    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),
    #[error("tensor {name:?} has unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("tensor {name:?} is truncated: needs bytes up to {needed}, shard has {available}")]
    Truncated {
        name: String,
        needed: u64,
        available: u64,
    },
    #[error("invalid tensor record {name:?}: {reason}")]
    InvalidRecord { name: String, reason: String },
}

/// Errors from the spectral computations.
#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("empty matrix ({rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("matrix data has {len} values, expected {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("tensor has {0} dimensions, expected 2")]
    NotMatrix(usize),
    #[error("matrix dimension below 2: {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("tensor contains {0} non-finite values")]
    FlaggedRecord(usize),
    #[error("tridiagonal eigensolver failed to converge")]
    NoConvergence,
    #[error("invalid singular values: {0}")]
    InvalidSingularValues(String),
}

/// Errors from scanning a checkpoint and from report (de)serialization.
#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid name pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {}: {reason}", path.display())]
    MalformedReport { path: PathBuf, reason: String },
}

/// Errors from building or emitting a selection plan.
#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("top fraction must be in (0, 1], got {0}")]
    FractionOutOfRange(f64),
    #[error("report contains no scanned tensors")]
    EmptyReport,
    #[error("plan does not match report: {0}")]
    Mismatch(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from the synthetic generators.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{spikes} spikes requested for a {rows}x{cols} matrix")]
    TooManySpikes {
        spikes: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
