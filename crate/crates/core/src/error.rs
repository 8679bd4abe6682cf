use icl_tensor::TensorError;
use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("digest mismatch for {shard}: manifest has {expected}, file hashes to {actual}")]
    DigestMismatch { shard: String, expected: String, actual: String },
    #[error("normalization stats missing: {0}")]
    StatsMissing(String),
    #[error("cannot split length {n} at m = {m} (need 0 < m < n)")]
    BadSplit { m: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence length {len} not divisible by {factor}")]
    LengthNotDivisible { len: usize, factor: usize },
    #[error("diffusion step {0} outside the schedule")]
    BadT(usize),
    #[error("warm-start k = {k} outside [1, {t}]")]
    BadK { k: usize, t: usize },
    #[error("mask has {mask} entries, known values have {known}")]
    MaskShapeMismatch { mask: usize, known: usize },
    #[error("state magnitude {magnitude:e} exceeded bound at step {step}")]
    NumericalDivergence { step: usize, magnitude: f64 },
    #[error("non-finite loss at step {step} (snapshot: {snapshot})")]
    NonFiniteLoss { step: usize, snapshot: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 1 for configuration errors, 2 for I/O and format
    /// errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_)
            | Error::BadSplit { .. }
            | Error::ShapeMismatch(_)
            | Error::LengthNotDivisible { .. }
            | Error::BadT(_)
            | Error::BadK { .. }
            | Error::MaskShapeMismatch { .. } => 1,
            Error::Io(_)
            | Error::DigestMismatch { .. }
            | Error::StatsMissing(_)
            | Error::SchemaMismatch(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::NumericalDivergence { .. } | Error::NonFiniteLoss { .. } => 3,
            Error::Tensor(e) => match e {
                TensorError::ShapeMismatch { .. } | TensorError::UnknownParameter(_) => 1,
                TensorError::NonFinite(_) => 3,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Io(_) => "IoFailure",
            Error::DigestMismatch { .. } => "DigestMismatch",
            Error::StatsMissing(_) => "StatsMissing",
            Error::BadSplit { .. } => "BadSplit",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::LengthNotDivisible { .. } => "LengthNotDivisible",
            Error::BadT(_) => "BadT",
            Error::BadK { .. } => "BadK",
            Error::MaskShapeMismatch { .. } => "MaskShapeMismatch",
            Error::NumericalDivergence { .. } => "NumericalDivergence",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::Tensor(_) => "Tensor",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ConfigInvalid(msg.into()))
}
