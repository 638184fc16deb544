use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failures surfaced by the command line, each with a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("schema error in {}: {detail}", path.display())]
    Schema { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Domain(#[from] grantgraph_core::Error),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

/// Machine-readable error body written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingFile { .. } => 3,
            CliError::Schema { .. } => 4,
            CliError::Config(_) | CliError::Domain(grantgraph_core::Error::Config(_)) => 5,
            CliError::Domain(_) => 6,
            CliError::Io { .. } => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::MissingFile { .. } => "missing_file",
            CliError::Schema { .. } => "schema_error",
            CliError::Config(_) => "invalid_config",
            CliError::Domain(e) => e.code(),
            CliError::Io { .. } => "io_error",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.code().to_string(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }

    pub fn schema(path: &Path, detail: impl ToString) -> Self {
        CliError::Schema {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    /// Maps an open/read failure, turning "not found" into [`CliError::MissingFile`].
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}
