use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("missing or unparsable value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("treatment varies within subject {0}")]
    TreatmentVaries(i64),
    #[error("moderating covariate `{column}` varies within subject {subject}")]
    ModeratorVaries { subject: i64, column: String },
    #[error("negative or non-finite time {time} for subject {subject}")]
    BadTime { subject: i64, time: f64 },
    #[error("treatment code {0} is not one of 0, 1, -0.5, 0.5")]
    BadTreatment(f64),
    #[error("outcome has zero range")]
    ConstantOutcome,
    #[error("requested {requested} held-out subjects but only {eligible} have two or more rows")]
    NotEnoughSubjects { requested: usize, eligible: usize },
    #[error("propensity {value} for subject {subject} is outside (0, 1)")]
    BadPropensity { subject: i64, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown subject {0}")]
    UnknownSubject(i64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite state at iteration {iteration} in {stage}")]
    NonFinite { iteration: usize, stage: &'static str },
    #[error("empty chain")]
    EmptyChain,
    #[error("interval lower bound exceeds upper bound at index {0}")]
    IntervalOrder(usize),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
