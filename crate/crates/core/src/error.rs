use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the CLI exit code they map to: configuration
/// problems exit 2, data/format problems exit 3, training divergence exits 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("oracle input too large: {pixels} pixels exceeds cap {cap}")]
    OracleTooLarge { pixels: usize, cap: usize },

    #[error("{path}: bad magic bytes (expected {expected:?})")]
    BadMagic { path: String, expected: [u8; 4] },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    BadVersion {
        path: String,
        found: u16,
        expected: u16,
    },

    #[error("{path}: truncated while reading {entry}")]
    Truncated { path: String, entry: String },

    #[error("checkpoint is missing parameters: {}", names.join(", "))]
    MissingParams { names: Vec<String> },

    #[error("checkpoint has unexpected parameters: {}", names.join(", "))]
    UnexpectedParams { names: Vec<String> },

    #[error("dataset pairing error: {0}")]
    Pairing(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {path}: {detail}")]
    Png { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_cli_contract() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Contract("x".into()).exit_code(), 2);
        assert_eq!(Error::Divergence("x".into()).exit_code(), 4);
        assert_eq!(Error::Data("x".into()).exit_code(), 3);
        assert_eq!(Error::Pairing("x".into()).exit_code(), 3);
        assert_eq!(
            Error::io("/nope", std::io::Error::from(std::io::ErrorKind::NotFound)).exit_code(),
            3
        );
    }
}
