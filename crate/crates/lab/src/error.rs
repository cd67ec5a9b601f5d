use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] crst_core::Error),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        LabError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        use crst_core::Error as E;
        match self {
            LabError::Config(_) => exit::CONFIG,
            LabError::Data(_) | LabError::Io { .. } | LabError::Parse { .. } => exit::DATA,
            LabError::Core(e) => match e {
                E::InvalidInput(_) | E::TooLarge { .. } => exit::CONFIG,
                E::VariantMismatch { .. } => exit::DATA,
                E::ZeroPower | E::Degenerate(_) | E::Empty(_) | E::Divergence(_) | E::Optimization(_) => exit::NUMERIC,
            },
        }
    }
}
