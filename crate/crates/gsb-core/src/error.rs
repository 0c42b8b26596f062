//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
///
/// The CLI maps these onto process exit codes: `Validation` and `Config`
/// problems are usage errors, `Domain`/`Numerical` cover parameter-space and
/// linear-algebra failures, `MonteCarlo` covers threshold breaches in the
/// simulation layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a precondition (missing field, inconsistent sizes, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Inputs leave the mathematical domain (parameter outside the admissible
    /// set, observation outside the support, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed (non-PD matrix, non-convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A Monte Carlo run breached a configured threshold.
    #[error("monte carlo failure: {0}")]
    MonteCarlo(String),

    /// The requested operation is outside what the library implements.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
