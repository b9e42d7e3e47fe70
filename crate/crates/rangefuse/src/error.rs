use std::path::{Path, PathBuf};

use serde::Serialize;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rangefuse_core::error::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config: {field}: {msg}")]
    Config { field: String, msg: String },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: impl ToString) -> Self {
        Error::Parse { path: path.to_path_buf(), line, msg: msg.to_string() }
    }

    pub fn config(field: &str, msg: impl ToString) -> Self {
        Error::Config { field: field.to_string(), msg: msg.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::Checkpoint { .. } => "checkpoint",
        }
    }

    /// Machine-readable form printed by the CLI on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper { error: Body { kind: self.kind(), message: self.to_string() } }).expect("error json")
    }
}
