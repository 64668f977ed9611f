use isda_core::IsdaError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] IsdaError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("property check failed: {0}")]
    PropertyFailure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(IsdaError::Divergence { .. }) => EXIT_DIVERGENCE,
            Self::PropertyFailure(_) => EXIT_PROPERTY_FAILURE,
            _ => EXIT_USAGE,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
