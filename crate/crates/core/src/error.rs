use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical routines and the data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: argument {value} outside its domain ({expected})")]
    Domain {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid quantile interval [{q1}, {q2}]: need 0 <= q1 < q2 <= 1")]
    InvalidInterval { q1: f64, q2: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("benchmark variance must be positive, got {0}")]
    DegenerateBenchmark(f64),

    #[error("truncation interval ({a}, {b}) carries probability mass {mass:e}, below the 1e-12 floor")]
    EmptyInterval { a: f64, b: f64, mass: f64 },

    #[error("conditional variance of coordinate {index} is not positive ({value:e})")]
    ZeroVariance { index: usize, value: f64 },

    #[error("{what} did not converge: best iterate {best}, residual {residual:e}")]
    Convergence {
        what: &'static str,
        best: f64,
        residual: f64,
    },

    #[error("margin inversion failed for target {target}: {reason}")]
    Inversion { target: f64, reason: &'static str },

    #[error("insufficient data: {context} needs at least {needed} rows, got {got}")]
    InsufficientData {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("matrix kinds differ: {0} vs {1}")]
    KindMismatch(String, String),

    #[error("rejection sampling gave up after {tries} tries")]
    RejectionBudget { tries: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{path}: column {column} not found")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{0}: dataset has no data rows")]
    EmptyDataset(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
