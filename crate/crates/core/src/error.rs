use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown source tag `{0}`")]
    UnknownSource(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("truncated payload in {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: u64,
        found: u64,
    },

    #[error("singular linear system (pivot {pivot:.3e} at column {col})")]
    Singular { col: usize, pivot: f64 },

    #[error("activation sign pattern violated at sample {index}: {detail}")]
    SignPattern { index: usize, detail: String },

    #[error("non-positive dual coefficient lambda[{index}] = {value:e}")]
    NonPositiveLambda { index: usize, value: f64 },

    #[error("margin residual {residual:e} at sample {index} exceeds tolerance")]
    Residual { index: usize, residual: f64 },

    #[error("degenerate direction: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("all {0} probes fell inside the exclusion band")]
    AllExcluded(usize),

    #[error("premise violated: {0}")]
    Premise(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}
