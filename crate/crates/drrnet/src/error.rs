use std::path::PathBuf;

use drrnet_core::Error as CoreError;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 1,
    Numeric = 2,
    Invariant = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } | HarnessError::Parse { .. } => {
                ExitCode::Config
            }
            HarnessError::Numeric(_) => ExitCode::Numeric,
            HarnessError::Invariant(_) => ExitCode::Invariant,
            HarnessError::Core(e) => match e {
                CoreError::NonFinite(_) => ExitCode::Numeric,
                CoreError::Irreversible
                | CoreError::Coefficient { .. }
                | CoreError::Schedule(_)
                | CoreError::Topology(_) => ExitCode::Config,
                CoreError::Shape { .. }
                | CoreError::Oracle(_)
                | CoreError::StaleCache(_)
                | CoreError::SingularJacobian { .. } => ExitCode::Invariant,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
