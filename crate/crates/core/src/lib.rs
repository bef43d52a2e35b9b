//! MKDCNet: an encoder-decoder network for binary polyp segmentation built
//! around multiple-kernel dilated convolution blocks and multiscale feature
//! fusion, implemented on a small CPU tensor library with reverse-mode
//! differentiation.

pub mod blocks;
pub mod config;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{MkdcNet, ModelConfig};
pub use params::ParamStore;
pub use tensor::{Scalar, Shape4, Tensor};
