use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure kinds shared by every module of the toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("guidance error: {0}")]
    Guidance(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("undefined OKS: {0}")]
    UndefinedOks(String),
    /// An error raised while processing one element of a batch.
    #[error("{what} {index}: {source}")]
    At {
        what: &'static str,
        index: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, what: &'static str, index: usize) -> Self {
        Error::At {
            what,
            index,
            source: Box::new(self),
        }
    }

    /// The innermost error, with batch positions stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::At { source, .. } => source.root(),
            e => e,
        }
    }
}

macro_rules! contract {
    ($($arg:tt)*) => { $crate::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use contract;
