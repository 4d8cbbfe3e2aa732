use thiserror::Error;

/// Errors raised by the smoothing library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix `{what}` is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("matrix `{what}` is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("integration failed at t = {t}: {what}")]
    Integration { t: f64, what: String },

    #[error("invalid observation schedule: {0}")]
    Schedule(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("proposal simulation failed at t = {t}")]
    Proposal { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
