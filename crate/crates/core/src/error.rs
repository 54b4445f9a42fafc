use thiserror::Error;

/// Error type shared by every module of the crate.
///
/// The variants map onto the three failure classes the CLI reports with
/// distinct exit codes: configuration, data, and runtime.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or hyperparameters (bad dimensions, rates, counts).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or out-of-range input data.
    #[error("data error: {0}")]
    Data(String),

    /// An API was called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric invariant was violated (NaN loss, non-finite gradient, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
