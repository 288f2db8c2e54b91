//! Fixed-point weight quantization for feedforward and convolutional networks.
//!
//! The pipeline has three stages: floating-point training ([`trainer::train_float`]),
//! direct quantization of every weight group onto a uniform odd-level grid
//! ([`quantizer::direct_quantize`]), and retraining with quantized forward/backward
//! passes while updates accumulate in a floating-point shadow copy
//! ([`trainer::retrain_quantized`]). The [`experiments`] module sweeps network size,
//! depth and precision and computes the effective compression ratio.
//!
//! All arithmetic is `f64`; quantization constrains weight values, not arithmetic.

pub mod data;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod quantizer;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
