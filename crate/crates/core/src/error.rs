use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CareError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CareError {
    /// A cell that should be numeric could not be parsed. Rows and columns
    /// are 1-based positions in the input file.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("malformed table: {0}")]
    Structure(String),

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// No detector flagged any point, so agreement over the union of
    /// outliers is undefined.
    #[error("empty outlier union: no detector flagged any point")]
    EmptyUnion,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CareError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CareError::Parameter(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CareError::Validation(msg.into())
    }

    /// True for errors caused by the input data rather than by parameters or
    /// numerical trouble.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CareError::Parse { .. }
                | CareError::Structure(_)
                | CareError::Validation(_)
                | CareError::Io { .. }
        )
    }
}
