//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("invalid {what}: {detail}")]
    Invalid { what: String, detail: String },

    #[error("marker out of range: onset {onset_s} s outside [0, {max_s}] s")]
    MarkerOutOfRange { onset_s: f64, max_s: f64 },

    #[error("unknown label {0:?} (expected \"MA\" or \"BL\")")]
    UnknownLabel(String),

    #[error("epoch window for marker {index} (onset {onset_s} s) exceeds recording bounds")]
    EpochOutOfBounds { index: usize, onset_s: f64 },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stratum ({subject}, {label}) has only {n} samples, need at least 3")]
    StratumTooSmall {
        subject: String,
        label: String,
        n: usize,
    },

    #[error("config validation failed for field `{field}`: {detail}")]
    Config { field: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn invalid(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
