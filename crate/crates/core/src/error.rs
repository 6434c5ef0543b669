use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model blowup: {term} evaluated to {value}")]
    ModelBlowup { term: &'static str, value: f64 },

    #[error("{name} = {value} outside accepted range [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("division by zero guard tripped: {0}")]
    DivisionByZero(&'static str),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("tape was recorded against parameter version {recorded}, parameters are now at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("training diverged (seed {seed}, epoch {epoch}): loss {loss}")]
    Divergence { seed: u64, epoch: usize, loss: f64 },

    #[error("infeasible calibration target: {reason} (achievable {lo:.3}..{hi:.3})")]
    Infeasible { reason: String, lo: f64, hi: f64 },

    #[error("empty trace")]
    EmptyTrace,

    #[error("trace too short: need at least {needed} samples, got {got}")]
    TraceTooShort { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ModelBlowup { .. }
                | Error::OutOfRange { .. }
                | Error::Divergence { .. }
                | Error::DivisionByZero(_)
        )
    }
}
