use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An eigenvalue fell below the PSD tolerance.
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, threshold {threshold:e})")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPd { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("noncentral sampling requires an integer dof >= {dim}, got {dof}")]
    UnsupportedDof { dof: f64, dim: usize },

    #[error("MGF argument outside domain: Sigma^-1 - 2T is not positive definite")]
    OutsideDomain,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("error SOP matrix is not positive definite")]
    SingularErrorMatrix,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a finite number")]
    UnparseableValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("input file {0} has no data rows")]
    EmptyFile(PathBuf),

    #[error("cell ({a_label}, {b_label}) has {count} rows, {required} required")]
    InsufficientCell {
        a_label: String,
        b_label: String,
        count: usize,
        required: usize,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
