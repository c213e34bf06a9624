//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("curves live on different grids ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },

    #[error("operation requires a nonempty collection of curves")]
    EmptyCollection,

    #[error("grid has {got} points, at least {need} required")]
    TooFewPoints { need: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("missing value at age {age} in {context} and missing policy is `fail`")]
    MissingValue { age: f64, context: String },

    #[error("degenerate design: need at least 2 row and 2 column levels, got {rows}x{cols}")]
    DegenerateDesign { rows: usize, cols: usize },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: i64, len: usize },

    #[error("series too short: length {len}, at least {need} required ({context})")]
    SeriesTooShort {
        len: usize,
        need: usize,
        context: String,
    },

    #[error("matrix is not symmetric (max |C - C'| = {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular regression design (order {order}); try a lower order")]
    SingularDesign { order: usize },

    #[error("degenerate bootstrap: calibration errors have zero spread everywhere")]
    DegenerateBootstrap,

    #[error("division by zero: actual value is 0 at curve {curve}, grid point {point}")]
    DivisionByZero { curve: usize, point: usize },

    #[error("invalid interval: lower > upper at curve {curve}, grid point {point}")]
    InvalidInterval { curve: usize, point: usize },

    #[error("nonstationary residual specification: spectral radius {rho} >= 1")]
    NonstationarySpec { rho: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
