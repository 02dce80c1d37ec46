//! Dense motion prediction from a single still image.
//!
//! Optical flow is quantized against a k-means codebook, a convolutional
//! network predicts a distribution over codebook entries at every cell of a
//! coarse grid, and the expected flow is decoded from those distributions.

pub mod codebook;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod multiframe;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor4;
