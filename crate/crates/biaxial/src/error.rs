use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] biaxial_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("invalid {what} file: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("iteration {iteration}: {source}")]
    Training {
        iteration: u64,
        source: biaxial_core::Error,
    },
    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
