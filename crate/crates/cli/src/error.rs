use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value for `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not match the model: missing [{}], extra [{}]", missing.join(", "), extra.join(", "))]
    NameMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("unknown layer `{name}`; available: {}", available.join(", "))]
    UnknownLayer { name: String, available: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] cat_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
