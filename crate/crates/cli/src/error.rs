use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration file.
    #[error("{file}: {message}")]
    Config { file: String, message: String },

    /// A malformed cell in the dataset. `line` is the 1-based line in the file.
    #[error("{file}, line {line}, column '{column}': {message}")]
    Cell {
        file: String,
        line: u64,
        column: String,
        message: String,
    },

    /// Dataset problems not tied to a single cell (header, empty arm, ...).
    #[error("{file}: {message}")]
    Data { file: String, message: String },

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Analysis(String),

    #[error(transparent)]
    Core(#[from] rotwin_core::Error),
}

impl CliError {
    /// 0 ok, 1 analysis failure, 2 configuration or parse failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. }
            | CliError::Cell { .. }
            | CliError::Data { .. }
            | CliError::Read { .. } => 2,
            CliError::Core(rotwin_core::Error::Config(_) | rotwin_core::Error::RotationCap { .. }) => 2,
            CliError::Write { .. } | CliError::Analysis(_) | CliError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
