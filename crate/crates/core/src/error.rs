//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A shape contract was violated, e.g. a mode product with a matrix whose
    /// column count does not match the tensor dimension of that mode.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: String,
        found: String,
    },

    /// Eigendecomposition found a negative eigenvalue even after jitter.
    #[error("matrix not positive definite: smallest eigenvalue {min_eig:e}")]
    NotPositiveDefinite { min_eig: f64 },

    /// A linear system that the model requires to be full rank was singular.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The relative-SSE denominator vanished: predictions do not vary
    /// across test samples.
    #[error("degenerate predictions: no variation across samples")]
    DegeneratePredictions,

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    /// The quadratic program has an empty feasible set. Reports the smallest
    /// residual variance achievable anywhere inside the box bounds.
    #[error("infeasible problem: minimal achievable variance {min_variance:e} exceeds the bound")]
    Infeasible { min_variance: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn dims(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
