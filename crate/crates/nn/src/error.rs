use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input length {len} too short: {reason}")]
    InsufficientLength { len: usize, reason: String },
    #[error("label {label} outside [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("class {0} has no training examples")]
    EmptyClass(usize),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in tensor at index {0}")]
    NonFinite(usize),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    ConfigParse(#[from] toml::de::Error),
    #[error(transparent)]
    ConfigWrite(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
