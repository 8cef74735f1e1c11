use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions or channel counts of two operands disagree.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input contains NaN/Inf or otherwise corrupt numeric data.
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Request exceeds what an implementation supports (e.g. oracle size limits).
    #[error("capability error: {0}")]
    Capability(String),

    /// Scan coefficients outside their admissible ranges.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in `{field}`: {detail}")]
    Format { field: String, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short category tag, used by the CLI to pick an exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::DataIntegrity(_) => "data-integrity",
            Error::Config(_) => "config",
            Error::Capability(_) => "capability",
            Error::Domain(_) => "domain",
            Error::Format { .. } | Error::UnsupportedVersion { .. } => "format",
            Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
        }
    }
}
