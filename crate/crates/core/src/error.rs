use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {what}: {reason}")]
    Decode { what: String, reason: String },
    #[error("image is {width}x{height}, below the 16x16 minimum")]
    TooSmall { width: u32, height: u32 },
    #[error("scale {0} is not one of 1, 2, 3, 4")]
    BadScale(usize),
    #[error("image of {width}x{height} is too small for a radial spectrum")]
    DegenerateImage { width: u32, height: u32 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("landmark {index} ({x}, {y}) lies outside a {width}x{height} image")]
    Range {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("empty sample set")]
    EmptySet,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("non-finite value during {0}")]
    NonFinite(String),
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("unsupported resize target {0}")]
    BadSize(u32),
    #[error("unsupported archive version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(what: impl std::fmt::Display, reason: impl std::fmt::Display) -> Self {
        Error::Decode {
            what: what.to_string(),
            reason: reason.to_string(),
        }
    }

    /// Configuration problems map to exit code 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::BadScale(_) | Error::BadSize(_) | Error::Version { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
