use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    // dataset
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("column `{0}` is not declared in the channel schema")]
    UnknownChannel(String),
    #[error("channel `{0}` is not present")]
    MissingChannel(String),
    #[error("invalid channel schema: {0}")]
    InvalidSchema(String),
    #[error("timestamp at row {row} does not increase strictly")]
    NonMonotonicTimestamps { row: usize },
    #[error("cannot parse timestamp `{value}` at row {row}")]
    BadTimestamp { row: usize, value: String },
    #[error("irregular cadence: {0}")]
    IrregularCadence(String),
    #[error("fault column at row {row} must be 0 or 1, found `{value}`")]
    BadFaultValue { row: usize, value: String },

    // numerics
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("every column has zero variance")]
    AllColumnsDegenerate,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("column names do not match the fitted model")]
    SchemaMismatch,
    #[error("invalid component count {k} for {n} components")]
    InvalidK { k: usize, n: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    // clustering
    #[error("input has no rows")]
    EmptyInput,
    #[error("input contains missing or non-finite values")]
    MissingValues,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("k = {k} must be smaller than the number of rows ({rows})")]
    KTooLarge { k: usize, rows: usize },
    #[error("k-distance curve needs at least 3 points, found {0}")]
    CurveTooShort(usize),
    #[error("threshold must be positive and finite, got {0}")]
    NonPositiveThreshold(f64),
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),

    // evaluation
    #[error("every row is noise; no cluster can be called normal")]
    AllNoise,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion counts are all zero")]
    EmptyCounts,

    // pipeline
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` is still executing")]
    RunBusy(String),
    #[error("run `{id}` failed: {message}")]
    RunFailed { id: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// the environment.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self.root(),
            Error::Io { .. } | Error::NumericalFailure(_) | Error::RunBusy(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
