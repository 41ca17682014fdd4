//! Single-image super-resolution with lossless-pooling convolutional networks.
//!
//! The crate covers the whole pipeline: a small HWC tensor type, the
//! rearrangement and convolution operators with hand-written gradients, a
//! MATLAB-compatible bicubic resampler, the two network variants, an Adam
//! training loop with bit-exact checkpoints, and benchmark-convention PSNR/SSIM.

pub mod binio;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod resample;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{concat_channels, Precision, Scalar, Shape, Tensor};
