use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: requested {requested} records but only {available} available")]
    InsufficientData { requested: usize, available: usize },
    #[error("unknown split role `{0}`")]
    UnknownRole(String),
    #[error("concatenation pool must be even, got {0} images")]
    OddPool(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("degenerate feature vector: {0}")]
    DegenerateFeature(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("unknown training algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("splits overlap on {count} record(s), first id {first}")]
    SplitOverlap { count: usize, first: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("training data contains a single class ({0})")]
    SingleClass(usize),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("record {0} has no ground-truth label")]
    MissingLabel(usize),
    #[error("missing checkpoint for epoch {0}")]
    MissingCheckpoint(usize),
    #[error("missing asset: {0}")]
    MissingAsset(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
