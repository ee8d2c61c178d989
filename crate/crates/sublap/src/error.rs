//! Error type shared by the geometry, operator and simulation layers.

use thiserror::Error;

/// Errors produced by geometric constructions and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent arguments (dimension mismatch, bad step size, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Input point lies outside the domain of the requested construction.
    #[error("domain error: {0}")]
    Domain(String),

    /// Construction is singular at a characteristic point of the hypersurface.
    #[error("characteristic point: {0}")]
    Characteristic(String),

    /// A numerical procedure broke down (rank loss, Gram-Schmidt collapse, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Operation is not defined for the given model family or dimension.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Configuration document could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn characteristic(msg: impl Into<String>) -> Self {
        Error::Characteristic(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }
}
