use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] blefp_core::Error),
    #[error(transparent)]
    Nn(#[from] blefp_nn::Error),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("experiment needs at least one method and one test scenario")]
    EmptySelection,
    #[error("device count {count} exceeds fleet of {fleet}")]
    CountExceedsFleet { count: usize, fleet: usize },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("train and test sets share frame seed {0:#x}")]
    SeedOverlap(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    ManifestWrite(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
