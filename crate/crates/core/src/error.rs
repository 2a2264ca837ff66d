use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e} is below -{threshold:e}")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}; parameters restored to the last good epoch")]
    Diverged { epoch: usize, batch: usize },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while reading IDX files.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{}: bad magic number 0x{found:08x}, expected 0x{expected:08x}", path.display())]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{}: truncated file, expected {expected} bytes but found {found}", path.display())]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{}: label {label} at index {index} is outside 0..=9", path.display())]
    LabelRange { path: PathBuf, index: usize, label: u8 },
}
