use std::io;
use std::path::{Path, PathBuf};

use scenewalk_core::error::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Text formats report the 1-based line.
    #[error("{src}:{line}: {msg}")]
    Parse { src: String, line: usize, msg: String },
    /// Binary formats report the byte offset.
    #[error("{src}: at byte {offset}: {msg}")]
    Binary { src: String, offset: usize, msg: String },
    #[error("{src}: {source}")]
    Json { src: String, source: serde_json::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("missing weights: {} not found (train it first)", .0.display())]
    MissingWeights(PathBuf),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    pub fn json(src: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
        let src = src.into();
        move |source| Error::Json { src, source }
    }

    /// 1 for problems with the caller's input, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Core(e) => match e.root() {
                CoreError::Numeric(_) | CoreError::State(_) | CoreError::Resource(_) => 2,
                _ => 1,
            },
            Error::Io { source, .. } => match source.kind() {
                io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied | io::ErrorKind::InvalidInput => 1,
                _ => 2,
            },
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::MissingWeights("w".into()).exit_code(), 1);
        assert_eq!(Error::Core(CoreError::Numeric("nan".into())).exit_code(), 2);
        let tagged = CoreError::Stage("refinement", Box::new(CoreError::Numeric("x".into())));
        assert_eq!(Error::Core(tagged).exit_code(), 2);
        assert_eq!(Error::Core(CoreError::EmptyScene).exit_code(), 1);
        let e = Error::io(Path::new("x"))(io::Error::other("disk"));
        assert_eq!(e.exit_code(), 2);
        assert!(Error::MissingWeights("a/b.swnn".into()).to_string().starts_with("missing weights"));
    }
}
