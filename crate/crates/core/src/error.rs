use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CountRegError>;

#[derive(Debug, Error)]
pub enum CountRegError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("row count mismatch: {covariates_path} has {covariate_rows} rows, {counts_path} has {count_rows} rows")]
    RowCountMismatch {
        covariates_path: PathBuf,
        covariate_rows: usize,
        counts_path: PathBuf,
        count_rows: usize,
    },

    #[error("invalid count at row {row}, column {column}: {value} (counts must be non-negative integers)")]
    InvalidCount { row: usize, column: usize, value: f64 },

    #[error("count row {row} has zero total")]
    ZeroTotalRow { row: usize },

    #[error("covariate column {column} ('{name}') is constant and cannot be standardized")]
    ConstantCovariate { column: usize, name: String },

    #[error("invalid design matrix: {0}")]
    InvalidDesign(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("penalty structure does not cover coefficient cell ({row}, {col})")]
    CellCoverage { row: usize, col: usize },

    #[error("surrogate expansion point has a zero cell at ({row}, {col})")]
    ZeroExpansionCell { row: usize, col: usize },

    #[error("ridge factorization failed: pivot {pivot:e} at index {index} is not positive")]
    Factorization { index: usize, pivot: f64 },

    #[error("non-finite value in {context} (observation {observation}, column {column})")]
    NonFinite {
        context: &'static str,
        observation: usize,
        column: usize,
    },

    #[error("non-positive working weight {weight:e} at observation {observation}, column {column}")]
    BadWorkingWeight {
        observation: usize,
        column: usize,
        weight: f64,
    },

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("unsupported model kind for {0}")]
    UnsupportedKind(&'static str),

    #[error("lambda search cap exceeded: largest lambda tried {lambda:e} still has {active} active cells")]
    LambdaCapExceeded { lambda: f64, active: usize },

    #[error("no converged fits among {attempted} tuning points")]
    NoConvergedFits { attempted: usize },
}
