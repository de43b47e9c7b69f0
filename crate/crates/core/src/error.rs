use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Validation => "validation",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was readable but its contents do not follow the expected format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("no foreground")]
    NoForeground,

    #[error("degenerate dice")]
    DegenerateDice,

    #[error("undefined cosine")]
    UndefinedCosine,

    #[error("phantom does not fit")]
    PhantomDoesNotFit,

    #[error("no tree path between nodes {0} and {1}")]
    NoTreePath(usize, usize),

    #[error("missing embedding for center {0}")]
    MissingEmbedding(usize),

    #[error("no center within snap radius of source for class {0}")]
    SourceNotSnapped(u16),

    #[error("vertex {vertex} is the source of classes {first} and {second}")]
    DuplicateSource { vertex: usize, first: u16, second: u16 },

    #[error("diverged at iteration {0}")]
    Diverged(usize),

    #[error("stage `{stage}` failed: {source} (artifacts: {})", artifacts.display())]
    Stage {
        stage: &'static str,
        artifacts: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorCategory::Io,
            Error::Diverged(_) => ErrorCategory::Numeric,
            Error::Stage { source, .. } => source.category(),
            _ => ErrorCategory::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
