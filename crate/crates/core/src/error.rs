use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied an invalid argument (bad shape, non-finite entry, out-of-range parameter).
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical precondition failed, e.g. a matrix that should be positive definite is not.
    #[error("numerical domain error: {what} (value {value:e})")]
    Numerical { what: String, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
