use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("unsupported nonlinearity: {0}")]
    Unsupported(String),

    #[error("trajectory diverged at t = {t}: |u|_H = {norm}")]
    Divergence { t: f64, norm: f64 },

    #[error("feedback decay bound violated with N = {n_modes} at t = {t} (ratio {ratio})")]
    DecayViolated { n_modes: usize, t: f64, ratio: f64 },

    #[error("enumeration budget exceeded: {0} states (at most 9 supported)")]
    Budget(usize),

    #[error("gradient unavailable: {0}")]
    GradientUnavailable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error at {}: {message}", path.display())]
    Serialization { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ser(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Serialization {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
