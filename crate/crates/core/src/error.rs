//! Error types shared across the solver.

use thiserror::Error;

/// Everything that can go wrong while building, stepping or driving a run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    /// A size, order or parameter is outside its admissible range.
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    /// A user-supplied input (sample point, function value) is unusable.
    #[error("invalid input: {0}")]
    Input(String),

    /// The SAV square root would be taken of a non-positive number.
    #[error("SAV radicand is non-positive ({radicand:e}); increase c0 or reduce amplitude")]
    NonPositiveRadicand { radicand: f64 },

    /// Exact zero pivot during factorization.
    #[error("singular matrix: zero pivot at index {pivot}")]
    Singular { pivot: usize },

    /// A linear solve missed its backward-error bound.
    #[error("linear solve residual {residual:e} exceeds {bound:e}")]
    Inaccurate { residual: f64, bound: f64 },

    /// Newton produced a non-finite increment.
    #[error("Newton iteration diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    /// Newton exhausted its iteration budget.
    #[error("Newton did not converge in {iterations} iterations (last increment {:e})", history.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { iterations: usize, history: Vec<f64> },

    /// A step failed; carries the slab index (1-based) and the cause.
    #[error("slab {slab} failed: {source}")]
    Step {
        slab: usize,
        #[source]
        source: Box<SolverError>,
    },

    /// Filesystem or formatting failure while writing results.
    #[error("I/O error: {0}")]
    Io(String),
}

impl SolverError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SolverError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by bad user input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, SolverError::Config { .. } | SolverError::Input(_))
    }
}

impl From<std::io::Error> for SolverError {
    fn from(e: std::io::Error) -> Self {
        SolverError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SolverError>;
