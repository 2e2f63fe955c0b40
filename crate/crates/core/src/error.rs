use thiserror::Error;

/// Errors produced by the simulator, the tag file codecs and the decoder.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("peak detection failed: expected {expected} peaks, found {} at {found:?} ps", found.len())]
    PeakDetection { expected: usize, found: Vec<f64> },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit code for this error class: 1 configuration, 2 data, 3 analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) => 2,
            Error::PeakDetection { .. } | Error::Analysis(_) => 3,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        match err.position() {
            Some(pos) => Error::Parse {
                offset: pos.byte(),
                message: err.to_string(),
            },
            None => Error::Data(err.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
