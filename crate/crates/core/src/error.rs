use std::path::{Path, PathBuf};

use crate::diff::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Invalid configuration or description file contents.
    #[error("{0}")]
    Config(String),
    /// Malformed binary or text data.
    #[error("{0}")]
    Format(String),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {inner}", path.display())]
    At { path: PathBuf, inner: Box<Error> },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Attach a file path, unless the error already names one.
    pub fn at(self, path: &Path) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::At { .. }) => e,
            e => Error::At { path: path.to_path_buf(), inner: Box::new(e) },
        }
    }
}
