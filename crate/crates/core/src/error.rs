use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("event references unknown patient {0}")]
    UnknownPatient(u64),

    #[error("duplicate patient_id {0}")]
    DuplicatePatient(u64),

    #[error("{what} {value} out of range [0, {bound})")]
    OutOfRange {
        what: &'static str,
        value: i64,
        bound: i64,
    },

    #[error("demographics for patient {patient_id} have length {found}, expected {expected}")]
    DemographicsWidth {
        patient_id: u64,
        found: usize,
        expected: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("synthetic calibration infeasible: {0}")]
    Calibration(String),

    #[error("untrainable matrix: {0}")]
    Untrainable(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite input at column {0}")]
    NonFinite(usize),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
