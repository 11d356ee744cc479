use std::path::{Path, PathBuf};

use gemm_core::Error as CoreError;

/// Everything a command can fail with. [`AppError::exit_code`] maps each
/// case onto the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("embedding `{key}` not found in {store}")]
    KeyNotFound { store: PathBuf, key: String },
    #[error("embedding entry {path} is corrupt: {message}")]
    CorruptEntry { path: PathBuf, message: String },
    #[error("checkpoint {path} is corrupt: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },
    #[error("checkpoint {path} has format version {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("workdir {0} is locked by another command (remove the lock file if no command is running)")]
    Locked(PathBuf),
    #[error("{0}")]
    Data(String),
    #[error("training aborted: {0}")]
    TrainingAbort(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

impl AppError {
    /// 1 usage/config, 2 data, 3 training abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config { .. } | AppError::Locked(_) => 1,
            AppError::TrainingAbort(_) => 3,
            AppError::Core(e) => match e {
                CoreError::NonFiniteLoss { .. } => 3,
                CoreError::InvalidArgument(_) | CoreError::HeadsDontDivide { .. } | CoreError::UnknownVariant(_) => 1,
                _ => 2,
            },
            _ => 2,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl std::fmt::Display) -> AppError {
        AppError::Format { path: path.to_path_buf(), message: message.to_string() }
    }
}
