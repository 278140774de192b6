use thiserror::Error;

use crate::sharing::SharingSet;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (model spec, sampler settings, CLI config).
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Overflow, NaN or other floating-point breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A pure term or covariance needed by a formula is absent from the moment table.
    #[error("missing moment for sharing set {0}")]
    MissingMoment(SharingSet),

    /// The request is well-formed but not supported for this topology or order.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the environment or by user-supplied configuration,
    /// as opposed to failures of the mathematics on valid input.
    pub fn is_config_or_io(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
