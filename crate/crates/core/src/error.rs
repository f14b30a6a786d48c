use std::path::PathBuf;

use thiserror::Error;

use crate::isp::ModuleKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("upsample unsupported: requested {requested} exceeds input extent {available}")]
    UpsampleUnsupported { requested: usize, available: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("{format} parse error at byte {offset}: {message}")]
    Format {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error("unsquashed parameter for {kind}: raw value {value} outside (-1, 1)")]
    UnsquashedParameter { kind: ModuleKind, value: f64 },

    #[error("{kind} expects {expected} parameters, got {got}")]
    ParamCount {
        kind: ModuleKind,
        expected: usize,
        got: usize,
    },

    #[error("{kind} parameter {index} = {value} outside [{min}, {max}]")]
    ParamRange {
        kind: ModuleKind,
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("ccm row {row} sums to {sum}, expected 1")]
    CcmRowSum { row: usize, sum: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("distribution is not normalized (sum = {0})")]
    NotNormalized(f64),

    #[error("episode already finished at stage {stage}")]
    EpisodeFinished { stage: usize },

    #[error("incomplete trajectory: {0}")]
    IncompleteTrajectory(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("search space too large for exhaustive mode: {0}")]
    SearchSpaceTooLarge(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Scorer(#[from] ScorerError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures of the external scorer protocol, one variant per cause.
#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("failed to launch scorer `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scorer exited with status {code:?}: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },

    #[error("scorer output has no SCORE line")]
    MissingScore,

    #[error("malformed SCORE line: {line:?}")]
    MalformedScore { line: String },

    #[error("gradient dimensions {got_w}x{got_h} do not match input {want_w}x{want_h}")]
    DimensionMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("scorer timed out after {0:.1} s")]
    Timeout(f64),

    #[error("unreadable gradient file: {0}")]
    BadGradient(String),

    #[error("scorer io: {0}")]
    Io(#[from] std::io::Error),
}

impl ScorerError {
    /// Stable short label for reporting.
    pub fn class(&self) -> &'static str {
        match self {
            ScorerError::Spawn { .. } => "spawn",
            ScorerError::NonZeroExit { .. } => "exit-status",
            ScorerError::MissingScore => "missing-score",
            ScorerError::MalformedScore { .. } => "malformed-score",
            ScorerError::DimensionMismatch { .. } => "dimension-mismatch",
            ScorerError::Timeout(_) => "timeout",
            ScorerError::BadGradient(_) => "bad-gradient",
            ScorerError::Io(_) => "io",
        }
    }
}
