use std::path::PathBuf;

use thiserror::Error;

/// Where in an input a format problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte {b}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("sequencing error: frame {got} arrived after frame {last}")]
    Sequencing { last: usize, got: usize },
    #[error("degenerate evidence: normalization constant {0:e} below threshold")]
    DegenerateEvidence(f64),
    #[error("format error at {location}: {message}")]
    Format { location: Location, message: String },
    #[error("data error at {location}: {message}")]
    Data { location: Location, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Parameter(_) => "parameter",
            Error::Sequencing { .. } => "sequencing",
            Error::DegenerateEvidence(_) => "degenerate-evidence",
            Error::Format { .. } => "format",
            Error::Data { .. } => "data",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn format_at_line(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Line(line),
            message: message.into(),
        }
    }

    pub(crate) fn format_at_byte(byte: u64, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Byte(byte),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
