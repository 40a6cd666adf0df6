use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Every violation found in a configuration, not just the first.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("{operation} failed ({context}): {source}")]
    Numerical {
        operation: &'static str,
        context: String,
        #[source]
        source: interlace_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical { source: interlace_core::Error::Io(_) | interlace_core::Error::Cache(_), .. } => 4,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attach the operation name and its parameters to a core failure.
pub(crate) trait Context<T> {
    fn during(self, operation: &'static str, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for interlace_core::Result<T> {
    fn during(self, operation: &'static str, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Numerical { operation, context: context(), source })
    }
}
