use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{key}: file not found: {}", path.display())]
    MissingFile { key: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: smartkde::Error },

    #[error("{0}")]
    Core(#[from] smartkde::Error),

    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
