//! A small 1D convolutional classifier written from scratch: conv blocks
//! (convolution, batch norm, leaky ReLU, max pool), dense layers with
//! dropout, softmax cross-entropy and SGD with exponential learning-rate
//! decay. Everything is `f64` and deterministic for a fixed seed.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use config::{lr_schedule, ConvBlockSpec, FcBlockSpec, NetworkConfig};
pub use error::{Error, Result};
pub use layers::Padding;
pub use model::{Gradients, Mode, Model};
pub use tensor::Tensor;
pub use train::{accuracy, dataset_tensor, fit, train, TrainReport};
