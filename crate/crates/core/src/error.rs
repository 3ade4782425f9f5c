use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: i64, hi: i64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("cannot read {}: {reason}", .path.display())]
    Unreadable { path: PathBuf, reason: String },

    #[error("row {row}, column {column}: malformed numeric field {text:?}")]
    MalformedField { row: u64, column: usize, text: String },

    #[error("row {row}: expected {expected} fields, found {found}")]
    FieldCount { row: u64, expected: usize, found: usize },

    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },

    #[error("row {row}, column {column}: non-finite value {value}")]
    NonFinite { row: u64, column: usize, value: f64 },

    #[error("{what}: bad magic bytes {found:?}")]
    BadMagic { what: &'static str, found: [u8; 8] },

    #[error("{what}: unsupported format version {found}")]
    UnsupportedVersion { what: &'static str, found: u32 },

    #[error("{what} is truncated or has trailing bytes: expected {expected} bytes, found {found}")]
    SizeMismatch { what: &'static str, expected: u64, found: u64 },

    #[error("{what} is truncated")]
    Truncated { what: &'static str },

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("rows [{start}, {}) out of range for a dataset of {available} rows", .start + .count)]
    OutOfRange { start: u64, count: u64, available: u64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("reduction failed on range {index} (rows {start_row}..{}): {source}", .start_row + .row_count)]
    ChunkFailed {
        index: usize,
        start_row: u64,
        row_count: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Cancellation(#[from] CancellationError),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("I/O error after {rows_written} rows: {source}")]
    Write {
        rows_written: u64,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raised when a covariance matrix has a non-positive variance, so the
/// correlation matrix is undefined.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("non-positive variance in column(s) {}", .labels.join(", "))]
pub struct CancellationError {
    pub columns: Vec<usize>,
    pub variances: Vec<f64>,
    pub labels: Vec<String>,
}

impl CancellationError {
    pub fn with_names(mut self, names: &[String]) -> Self {
        self.labels = self.columns.iter().map(|&c| names.get(c).cloned().unwrap_or_else(|| c.to_string())).collect();
        self
    }
}
