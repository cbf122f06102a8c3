use std::path::Path;

/// Failures surfaced by a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Integrity(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<armacell::Error> for CliError {
    fn from(e: armacell::Error) -> Self {
        use armacell::Error as E;
        match e {
            E::NonFinite(_) | E::AllFailed { .. } => CliError::Numeric(e.to_string()),
            E::Format(_) => CliError::Integrity(e.to_string()),
            E::Io(source) => CliError::Io {
                path: "<tensor file>".into(),
                source,
            },
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
