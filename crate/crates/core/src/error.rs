use thiserror::Error;

/// Errors raised by the kinirl engine.
///
/// The variants are grouped by how a caller is expected to react: argument
/// and state errors are programming mistakes, data/format/config errors come
/// from bad inputs on disk, numeric errors mean an optimisation step blew up,
/// and planning errors mean a trajectory could not be produced.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error at line {line} (key `{key}`): {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
