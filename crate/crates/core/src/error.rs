use thiserror::Error;

use crate::estimate::ConstrainedFit;

/// Errors raised by the table model, the estimators and the chi-bar machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("row {row} has zero total")]
    EmptyRow { row: usize },

    #[error("column {column} has zero total")]
    EmptyColumn { column: usize },

    #[error("negative count {value} at row {row}, column {column}")]
    NegativeCount { row: usize, column: usize, value: i64 },

    #[error("zero cell at row {row}, column {column}")]
    ZeroCell { row: usize, column: usize },

    #[error("parameter component {index} = {value} exceeds the cap of {cap}")]
    OverflowGuard { index: usize, value: f64, cap: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("divergence is infinite for these supports")]
    InfiniteDivergence,

    #[error("invalid phi function: {0}")]
    InvalidPhi(String),

    #[error("constrained fit did not converge after {} iterations", .0.iterations)]
    NonConvergence(Box<ConstrainedFit>),

    #[error("degenerate probability vector: component {index} is {value}")]
    Degenerate { index: usize, value: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension {dim} is too large for subset enumeration (max {max})")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("chi-bar quantile is not identifiable: all weight sits on the point mass at zero")]
    NonIdentifiable,

    #[error("delta must be nonnegative, got {0}")]
    NegativeDelta(f64),

    #[error("missing baseline statistic {0}")]
    MissingBaseline(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
