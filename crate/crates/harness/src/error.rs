//! Harness-level errors and their process exit codes.

use normlab_core::Error as CoreError;

/// Failures surfaced by the harness; each maps to a CLI exit code
/// (0 success, 2 configuration problems, 3 runtime failures).
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing or unreadable input: {0}")]
    Input(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input(_) => 2,
            HarnessError::Training(_) | HarnessError::Numeric(_) | HarnessError::Io(_) => 3,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) | CoreError::Domain(m) | CoreError::Dimension(m) => {
                HarnessError::Config(m)
            }
            CoreError::Numeric(m) => HarnessError::Numeric(m),
            CoreError::Io(m) => HarnessError::Io(m),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;
