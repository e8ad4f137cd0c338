use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("label error: {0}")]
    Label(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numerics error at epoch {epoch:?}: {msg}")]
    Numerics { epoch: Option<usize>, msg: String },
    #[error("spec error: {0}")]
    Spec(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("{} ensemble member(s) failed: {}", .0.len(), list_failures(.0))]
    Members(Vec<MemberFailure>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A member (architecture and seed, or a source checkpoint) that could not be
/// trained, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberFailure {
    pub member: String,
    pub error: String,
}

fn list_failures(failures: &[MemberFailure]) -> String {
    failures.iter().map(|f| format!("{} ({})", f.member, f.error)).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics { epoch: None, msg: msg.into() }
    }
}
