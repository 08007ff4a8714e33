use thiserror::Error;

/// Failure classes; each maps to one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("constraint: {0}")]
    Constraint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Format(_) | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
            Error::Constraint(_) => 4,
        }
    }

    pub fn reason_code(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Numeric(_) => "numeric",
            Error::Constraint(_) => "constraint",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
