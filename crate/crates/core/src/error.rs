use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A word or buffer does not match the layout of its format.
    #[error("format error: {0}")]
    Format(String),

    /// The operation needs an exponent field and the format has none.
    #[error("unsupported format `{format}`: {reason}")]
    UnsupportedFormat {
        format: String,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The block compressor rejected a plane segment.
    #[error("codec error in plane {plane}: {message}")]
    Codec { plane: usize, message: String },

    /// A stored plane did not decode to the expected size.
    #[error("integrity error in plane {plane}: {message}")]
    Integrity { plane: usize, message: String },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }

    /// True for errors caused by bad input data rather than bad invocation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Codec { .. }
                | Error::Integrity { .. }
                | Error::Corrupt(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Manifest(_)
        )
    }
}
