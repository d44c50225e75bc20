//! Shared I/O plumbing: seeding, JSONL, manifests, config files, validation.

pub mod config;
pub mod jsonl;
pub mod manifest;
pub mod seed;
pub mod validate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
}

impl IoError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IoError::Io { path: path.as_ref().display().to_string(), source }
    }
}
