use std::path::PathBuf;

use thiserror::Error;

/// Problems with inputs the caller controls: config values, paths, datasets.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("database file not found or unreadable: {}", .0.display())]
    MissingDatabase(PathBuf),
    #[error("cannot open database {}: {message}", .path.display())]
    OpenDatabase { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("invalid dataset {}:\n  {}", .path.display(), .problems.join("\n  "))]
    Dataset {
        path: PathBuf,
        problems: Vec<String>,
    },
}

impl ConfigError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Self::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

/// Failures talking to a ranker, judge, or generator.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Protocol(String),
    #[error("stub table is missing an entry: {0}")]
    StubMissing(String),
    #[error("backend misconfigured: {0}")]
    Misconfigured(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("pointwise scoring failed for candidates {failed:?}: {source}")]
    Pointwise {
        failed: Vec<usize>,
        #[source]
        source: BackendError,
    },
    #[error("no pairwise vote recorded for candidates ({a}, {b})")]
    MissingVote { a: usize, b: usize },
    #[error("missing pointwise score for candidate {0}")]
    MissingScore(usize),
    #[error("candidate {0} has not been executed")]
    NotExecuted(usize),
}

impl Error {
    /// True when the failure came from a model backend rather than local input.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_) | Error::Pointwise { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
