use std::io;
use std::path::PathBuf;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] pointrft_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for bad input or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use pointrft_core::Error as E;
        match self {
            LabError::Core(E::Numeric(_)) => 2,
            LabError::Core(_) => 1,
            LabError::Parse { .. } | LabError::Format { .. } | LabError::Config(_) => 1,
            LabError::Io { .. } | LabError::Json(_) | LabError::Csv(_) => 2,
        }
    }
}
