use std::path::PathBuf;

/// Errors raised across the decomposition pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-uniform timestamps at row {row}: expected {expected}, found {found}")]
    Uniformity { row: usize, expected: f64, found: f64 },
    #[error("record too short: {rows} snapshot(s), need at least 3")]
    TooShort { rows: usize },
    #[error("duplicate channel id `{0}`")]
    Duplicate(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("period error: {0}")]
    Period(String),
    #[error("unstable simulation: {0}")]
    Stability(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io { path: path.into(), err }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 1 for numerical failures, 2 for
    /// input, I/O and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateData(_)
            | Error::Numerical(_)
            | Error::Period(_)
            | Error::Geometry(_)
            | Error::Stability(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Uniformity { .. }
            | Error::TooShort { .. }
            | Error::Duplicate(_)
            | Error::Argument(_)
            | Error::Config(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
