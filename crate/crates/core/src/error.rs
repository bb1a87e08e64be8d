use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-uniform sampling at row {row}: gap {gap}s, expected {expected}s")]
    NonUniformSampling { row: usize, gap: i64, expected: i64 },
    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unparseable timestamp at row {row}: {value:?}")]
    BadTimestamp { row: usize, value: String },
    #[error("split too small: {segment} has {rows} rows, need at least {needed}")]
    SplitTooSmall {
        segment: &'static str,
        rows: usize,
        needed: usize,
    },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("channel {channel} has zero variance")]
    ZeroVariance { channel: usize },
    #[error("frame too short: {rows} rows, need {needed}")]
    FrameTooShort { rows: usize, needed: usize },
    #[error("window length {window} exceeds lookback {lookback}")]
    WindowExceedsLookback { window: usize, lookback: usize },
    #[error("window lengths must be non-increasing and positive: {0:?}")]
    NonDescendingWindows(Vec<usize>),
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("spectrum has {got} bins, expected {expected} for length {n}")]
    LengthMismatch { n: usize, expected: usize, got: usize },
    #[error("empty prompt text")]
    EmptyText,
    #[error("no timestamps to render into a dynamic prompt")]
    EmptyTimestamps,
    #[error("embedding provider unavailable after {retries} retries: {reason}")]
    ProviderUnavailable { retries: usize, reason: String },
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
    #[error("embedding has invalid shape or values: {0}")]
    EmbeddingShapeInvalid(String),
    #[error("no stored embedding for prompt hash {0}")]
    CacheMiss(String),
    #[error("stored embedding hash mismatch: manifest {expected}, data {got}")]
    HashMismatch { expected: String, got: String },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("series too short for ADF regression: {n} observations, need {needed}")]
    SeriesTooShort { n: usize, needed: usize },
    #[error("singular ADF regression")]
    SingularRegression,
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
