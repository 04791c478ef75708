use std::path::PathBuf;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the `camnet`
/// binary: `Config` exits 3, `Io` exits 4, everything else exits 5.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes or layer wiring do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration, architecture string, or CLI value.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be read or written.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not in the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Dataset contents are inconsistent (shapes, labels, pairing).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or a diverged optimization.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
