use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("direction ({theta}°, {phi}°) is outside the field of view")]
    OutOfFov { theta: f64, phi: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("odd-length interleaved input ({0} values)")]
    OddLength(usize),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("malformed {what} file {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: PathBuf::new(),
            reason: reason.into(),
        }
    }

    /// Attach a file path to a format error raised while parsing text.
    pub(crate) fn at_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format { what, reason, .. } => Error::Format {
                what,
                path: p.into(),
                reason,
            },
            other => other,
        }
    }

    /// Short diagnostic class printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Geometry(_) | Error::OutOfFov { .. } => "geometry",
            Error::Shape { .. } | Error::OddLength(_) => "shape",
            Error::Degenerate(_) => "degenerate",
            Error::Config(_) => "config",
            Error::Training(_) => "training",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
