use std::path::PathBuf;

use crate::types::EffectType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} outside range [{lo}, {hi}]")]
    Range {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("signal is silent (rms {rms:e})")]
    SilentSignal { rms: f64 },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("effect type mismatch: expected {expected}, got {got}")]
    TypeMismatch { expected: EffectType, got: EffectType },

    #[error("invalid chain: {0}")]
    Chain(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("search dimension is {0}; single-parameter problems use TPE")]
    UseTpe(usize),

    #[error("search dimension is {0}; TPE handles exactly one parameter, use CMA-ES")]
    UseCmaes(usize),

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("ingestion error in {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

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

    /// Process exit status: 2 for bad arguments, 3 for bad or missing data,
    /// 4 when an internal invariant broke.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::UseTpe(_) | Error::UseCmaes(_) | Error::Range { .. } | Error::Chain(_) => 2,
            Error::Io { .. }
            | Error::Wav { .. }
            | Error::Json(_)
            | Error::Manifest(_)
            | Error::Ingestion { .. }
            | Error::Split(_)
            | Error::Calibration(_)
            | Error::SilentSignal { .. }
            | Error::EmptyInput
            | Error::Predictor(_) => 3,
            Error::Dimension { .. } | Error::NonFinite { .. } | Error::TypeMismatch { .. } => 4,
        }
    }
}
