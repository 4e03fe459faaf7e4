use std::path::PathBuf;

use neckgap_core::Error as CoreError;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    Numeric = 2,
    Breach = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(#[source] CoreError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            HarnessError::Config { .. } | HarnessError::Usage(_) | HarnessError::Io { .. } => ExitStatus::Usage,
            HarnessError::Numeric(_) => ExitStatus::Numeric,
        }
    }
}

/// Errors from the numerical core: bad inputs are usage errors, everything
/// else is a numerical failure.
impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parameter(_)
            | CoreError::Precondition(_)
            | CoreError::UnsupportedDimension(_)
            | CoreError::InvalidWeight { .. }
            | CoreError::Geometry(_)
            | CoreError::Domain(_) => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Numeric(e),
        }
    }
}
