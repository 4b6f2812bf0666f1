use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}:{line}: field `{field}`: {message}", path.display())]
    Schema {
        path: PathBuf,
        line: u64,
        field: String,
        message: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Schema { .. } | CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn schema(path: impl Into<PathBuf>, line: u64, field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<pathvb::Error> for CliError {
    fn from(e: pathvb::Error) -> Self {
        use pathvb::Error as E;
        match e {
            E::Config(msg) => CliError::Config(msg),
            E::Structural(_) | E::Domain(_) | E::Capacity(_) | E::Unsupported(_) => CliError::Data(e.to_string()),
            E::Numerical { .. } | E::FitAborted { .. } | E::UndefinedMetric(_) => CliError::Numerical(e.to_string()),
        }
    }
}
