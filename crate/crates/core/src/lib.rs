//! Simulation and feature extraction for BLE radio-frequency fingerprinting
//! with transient-and-preamble phase derivatives (TPD).

pub mod bits;
pub mod error;
pub mod features;
pub mod fleet;
pub mod gfsk;
pub mod ingest;
pub mod iq;
pub mod seed;

pub use bits::Bits;
pub use error::{Error, Result};
pub use features::{FeatureMethod, FeatureOptions, FeatureTensor, WindowSpec};
pub use gfsk::{ChannelParams, GfskConfig, ImpairmentField, ImpairmentSet};
pub use iq::{ComplexSample, FrameMeta, IqFrame, PhaseSeq};
