//! Error taxonomy shared across the crate.
//!
//! Errors are grouped into the classes the CLI maps to exit codes:
//! configuration (2), data/format (3), numeric failure (4).

use std::path::PathBuf;

/// Low-level `.fmap` container failures. Each malformed-input case is a
/// distinct variant so callers can assert on the class, not the message.
#[derive(Debug, thiserror::Error)]
pub enum FmapError {
    #[error("bad magic {found:?}, expected \"FMAP\"")]
    BadMagic { found: String },
    #[error("unsupported fmap version {found}, expected {expected}")]
    BadVersion { found: u32, expected: u32 },
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("truncated header while reading {field}")]
    TruncatedHeader { field: &'static str },
    #[error("trailing {0} bytes after payload")]
    TrailingBytes(usize),
    #[error("extent overflow: {0}")]
    ExtentOverflow(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor extents or dimensionality do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates an operation's precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A configuration file or flag combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Episode archives, indexes, or splits are missing or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// Binary container parsing failed.
    #[error("format error: {0}")]
    Format(#[from] FmapError),

    /// A forward computation produced NaN/Inf or another numeric fault.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training diverged; the epoch is reported for reproduction.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code class for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Param(_) | Error::Shape(_) => 2,
            Error::Data(_) | Error::Format(_) | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Training { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
