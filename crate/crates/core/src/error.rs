use alloc::boxed::Box;
use alloc::string::String;

/// Failures raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("scene has no usable geometry")]
    EmptyScene,
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("{0}: {1}")]
    Stage(&'static str, Box<Error>),
}

impl Error {
    /// The underlying error with stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage(_, inner) => inner.root(),
            e => e,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage(stage, Box::new(e))
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(what: impl Into<String>) -> Error {
    Error::Shape(what.into())
}

pub(crate) fn arg_err(what: impl Into<String>) -> Error {
    Error::Argument(what.into())
}
