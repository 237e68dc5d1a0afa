use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length {0} is not a power of two")]
    NonPowerOfTwoLength(usize),
    #[error("nfft {nfft} is shorter than the analyzed window ({len} samples)")]
    NfftTooShort { nfft: usize, len: usize },
    #[error("frame has zero energy")]
    ZeroEnergyFrame,
    #[error("frame must contain at least one sample")]
    EmptyFrame,
    #[error("sample {0} is not finite")]
    NonFiniteSample(usize),
    #[error("sample rate must be positive, got {0}")]
    InvalidSampleRate(f64),
    #[error("channel index {0} outside 0..=36")]
    ChannelOutOfRange(u32),
    #[error("bit sequence is empty")]
    EmptyBits,
    #[error("invalid bit character {0:?}")]
    InvalidBit(char),
    #[error("BT product must lie in (0, 1], got {0}")]
    InvalidBt(f64),
    #[error("invalid GFSK configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid impairment: {0}")]
    InvalidImpairment(String),
    #[error("unknown impairment field {0:?}")]
    UnknownImpairmentField(String),
    #[error("window of {window} samples exceeds frame of {frame} samples")]
    WindowExceedsFrame { window: usize, frame: usize },
    #[error("invalid impairment ranges: {0}")]
    InvalidRanges(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed capture file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("no frames detected in capture")]
    NoFramesDetected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] toml::de::Error),
    #[error("manifest write error: {0}")]
    ManifestWrite(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
