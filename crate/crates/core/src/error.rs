use thiserror::Error;

/// Errors raised by the numerical library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model, design, dataset or configuration.
    #[error("validation error: {0}")]
    Validation(String),

    /// Adaptive quadrature ran out of subdivisions before meeting its tolerance.
    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e}")]
    Accuracy { estimate: f64, error_bound: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A matrix factorization failed (even after jitter escalation, where applicable).
    #[error("numerical failure: {message} (n = {n}, trace/n = {mean_diag:e}, min diag = {min_diag:e}, max diag = {max_diag:e})")]
    Numerical {
        message: String,
        n: usize,
        mean_diag: f64,
        min_diag: f64,
        max_diag: f64,
    },

    /// The quadratic-variation configuration leaves no admissible index or stencil.
    #[error("estimation infeasible: {0}")]
    Infeasible(String),

    /// The moment-condition system for the differencing constants is rank deficient.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// The sampler never accepted a proposal during burn-in.
    #[error("mixing failure: {0}")]
    MixingFailure(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
