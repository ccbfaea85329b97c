use thiserror::Error;

/// Errors shared across the estimation, sampling, and posterior modules.
#[derive(Debug, Error)]
pub enum SvyError {
    /// Malformed inputs (bad dimensions, invalid probabilities, empty domains, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Dimension mismatch between related quantities.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Requested sample size exceeds the population size.
    #[error("sample size {n} exceeds population size {pop_n}")]
    SampleTooLarge { n: usize, pop_n: usize },

    /// Design matrix (with intercept) does not have full column rank.
    #[error("design matrix is rank deficient")]
    RankDeficient,

    /// Too few observations for the requested operation.
    #[error("too few observations: {0}")]
    TooFewObservations(String),

    /// A numerical routine failed (factorization, invalid variance, overflow, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative solver did not reach its convergence criterion.
    #[error("did not converge: {0}")]
    NonConvergence(String),
}

impl SvyError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SvyError::Invalid(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        SvyError::Dimension(msg.into())
    }
}
