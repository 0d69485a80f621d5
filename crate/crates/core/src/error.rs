use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = InspexError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum InspexError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape([usize; 3], [usize; 3]),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl InspexError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
