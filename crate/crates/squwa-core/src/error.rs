//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SquwaError>;

/// Everything that can go wrong in the pipeline.
///
/// `kind()` gives the stable machine-readable name used in CLI error output
/// and exit-code mapping.
#[derive(Debug, Error)]
pub enum SquwaError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("checkpoint format error: {0}")]
    Version(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl SquwaError {
    /// Stable error-kind name for machine consumption.
    pub fn kind(&self) -> &'static str {
        match self {
            SquwaError::Shape(_) => "ShapeError",
            SquwaError::Value(_) => "ValueError",
            SquwaError::Mask(_) => "MaskError",
            SquwaError::Config(_) => "ConfigError",
            SquwaError::Io(_) => "IOError",
            SquwaError::Checksum(_) => "ChecksumError",
            SquwaError::Version(_) => "VersionError",
            SquwaError::Degenerate(_) => "DegenerateError",
            SquwaError::Numerical(_) => "NumericalError",
            SquwaError::Divergence(_) => "DivergenceError",
        }
    }
}

macro_rules! err_ctor {
    ($fn_name:ident, $variant:ident) => {
        impl SquwaError {
            pub fn $fn_name(msg: impl Into<String>) -> Self {
                SquwaError::$variant(msg.into())
            }
        }
    };
}

err_ctor!(shape, Shape);
err_ctor!(value, Value);
err_ctor!(mask, Mask);
err_ctor!(config, Config);
err_ctor!(checksum, Checksum);
err_ctor!(version, Version);
err_ctor!(degenerate, Degenerate);
err_ctor!(numerical, Numerical);
err_ctor!(divergence, Divergence);
