use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: parse error at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: malformed wav at byte offset {offset}: {msg}")]
    Wav {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("detector failed on segment {segment}: {msg}")]
    Detector { segment: String, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Stage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
