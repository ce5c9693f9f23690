use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("region set is empty")]
    EmptyRegionSet,
    #[error("duplicate region id `{0}`")]
    DuplicateRegionId(String),
    #[error("time fractions of workload `{workload}` sum to {sum}, expected 1")]
    TimeFractionSumMismatch { workload: String, sum: f64 },
    #[error("region `{region}`: {reason}")]
    InvalidRegion { region: String, reason: String },
    #[error("invalid bound [{lower}, {upper}]: lower must be strictly below upper")]
    InvalidBound { lower: f64, upper: f64 },
    #[error("region `{0}` is not in the configuration")]
    RegionNotInConfiguration(String),
    #[error("region `{0}` is crucial and cannot be part of a configuration")]
    CrucialRegionInConfiguration(String),
    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("IDX payload truncated: header declares {declared} bytes, {available} available")]
    TruncatedPayload { declared: usize, available: usize },
    #[error("label {label} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },
    #[error("subset of {requested} requested from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad weight file: {0}")]
    BadWeights(String),
    #[error("the MLP input layer `{0}` is always crucial")]
    AttemptToDemoteInputLayer(String),
    #[error("k = {k} exceeds the training set size {available}")]
    KTooLarge { k: usize, available: usize },

    #[error("HaRE calibration target {0} is below 1")]
    InvalidTarget(f64),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("invalid fault spec: {0}")]
    InvalidFaultSpec(String),
    #[error("invalid selection constraints: {0}")]
    InvalidConstraints(String),
    #[error("injection plan names region `{0}` outside the configuration")]
    PlanOutsideConfiguration(String),

    #[error("{path}:{line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("config {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
