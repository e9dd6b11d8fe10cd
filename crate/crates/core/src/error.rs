use std::path::PathBuf;

/// Errors raised across the crate.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`])
/// which the CLI prints ahead of the human-readable message.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid parallel plan: {0}")]
    Plan(String),

    #[error("error-feedback state: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{mode} mode: {source}")]
    Mode {
        mode: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIMENSION",
            Error::Parameter(_) => "E_PARAMETER",
            Error::Plan(_) => "E_PLAN",
            Error::State(_) => "E_STATE",
            Error::Training { .. } => "E_TRAINING",
            Error::Fit(_) => "E_FIT",
            Error::Parse { .. } => "E_PARSE",
            Error::Format(_) => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Mode { source, .. } => source.code(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: path.into().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
