use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Both sources claim zero variance but disagree on the value.
    #[error("degenerate fusion: both variances are zero but values differ ({model} vs {obs})")]
    DegenerateFusion { model: f64, obs: f64 },

    #[error("degenerate gain: model and observation variances are both zero")]
    DegenerateGain,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration failed at t = {last_time}: {reason}")]
    Integration { last_time: f64, reason: String },

    /// A piecewise run stopped mid-way; carries the last state that was assimilated
    /// (or the initial condition when no assimilation happened yet).
    #[error("segment starting at t = {last_time} failed: {source}")]
    Segment {
        last_time: f64,
        last_state: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("query time {time} outside trajectory span [{start}, {end}]")]
    OutOfRange { time: f64, start: f64, end: f64 },

    #[error("{}:{line}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: line {line}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
