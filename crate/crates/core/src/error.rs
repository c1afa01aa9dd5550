use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("autograd: {0}")]
    Autograd(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("architecture hash mismatch: checkpoint {found:016x}, config {expected:016x}")]
    ArchitectureMismatch { expected: u64, found: u64 },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::NonFinite(_) | Error::Autograd(_) | Error::Shape(_) => 3,
            Error::Io { .. } | Error::Format(_) | Error::ArchitectureMismatch { .. } | Error::Data(_) => 2,
        }
    }
}
