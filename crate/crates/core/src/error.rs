use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where in an input file a parse error occurred.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(u64),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Offset(n) => write!(f, "byte offset {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient calibration data: {0}")]
    InsufficientCalibrationData(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("not calibrated: {0}")]
    NotCalibrated(String),
    #[error("class {class} needs {needed} donor classes from the many split, only {available} available")]
    InsufficientDonors {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("unsupported artifact version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Line(line),
            message: message.into(),
        }
    }

    pub(crate) fn parse_offset(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location::Offset(offset),
            message: message.into(),
        }
    }
}
