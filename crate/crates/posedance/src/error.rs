use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A file that exists but does not parse.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] posedance_core::Error),
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, message: impl ToString) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}
