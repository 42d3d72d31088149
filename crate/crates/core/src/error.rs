use thiserror::Error;

pub type Result<T> = std::result::Result<T, LvmError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LvmError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (max relative deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("{context}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("symmetric eigendecomposition did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,

    #[error("{context}: matrix is singular")]
    Singular { context: String },

    #[error("invalid spec at `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{0}")]
    NotInvertible(String),

    #[error("model `{model}` is not linear-Gaussian: {reason}")]
    NotLinearGaussian { model: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl LvmError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LvmError::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn mismatch(context: impl Into<String>, expected: usize, found: usize) -> Self {
        LvmError::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }

    /// Whether the failure comes from bad input (as opposed to a numerical breakdown).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            LvmError::NotSymmetric { .. }
                | LvmError::NotSquare { .. }
                | LvmError::NonFinite { .. }
                | LvmError::DimensionMismatch { .. }
                | LvmError::InvalidSpec { .. }
                | LvmError::Precondition(_)
                | LvmError::NotInvertible(_)
                | LvmError::NotLinearGaussian { .. }
        )
    }
}
