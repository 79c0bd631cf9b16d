use thiserror::Error;

/// Errors surfaced by the library. `Input` covers anything the caller can
/// fix (bad files, bad programs, bad configuration); `Invariant` means the
/// library detected a broken internal contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Neuro(#[from] featsearch_neuro::NeuroError),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the error is the caller's to fix rather than a library bug.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_) | Error::Neuro(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
