use std::path::PathBuf;

use thiserror::Error;

use crate::map::MapMode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("map mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: MapMode, found: MapMode },

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error(
        "sampler diverged on {divergent} of {iterations} iterations \
         (step size {step_size:.3e}, acceptance {acceptance:.3})"
    )]
    Divergent {
        divergent: usize,
        iterations: usize,
        step_size: f64,
        acceptance: f64,
    },

    #[error("invalid scan plan: {0}")]
    InvalidPlan(String),

    #[error("unknown instance set {0}")]
    UnknownSet(u32),

    #[error("address ({row}, {col}) outside the 32x32 array")]
    AddressOutOfRange { row: u32, col: u32 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
