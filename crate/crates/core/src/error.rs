use thiserror::Error;

/// Error type shared by every module of the crate.
///
/// The variants mirror the failure modes of the numerical operations:
/// bad inputs, exceeded refinement limits, integrands escaping a
/// quadrature box, non-finite values, and requests for derivatives a
/// field does not carry.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("truncation tail above threshold: {0}")]
    Truncation(String),

    #[error("not found: {0}")]
    NotFound(String),
}

pub type Result<T> = std::result::Result<T, Error>;
