//! A small laboratory for length generalization on arithmetic tasks.
//!
//! It trains an encoder-decoder transformer from scratch, builds
//! hand-designed windowed attention biases ([`abs_bias`]), and calibrates
//! biases automatically from an interpolating model's attention
//! ([`abc_calibration`]). The [`harness`] module ties these together into
//! experiments with persisted artifacts.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! element type for the common cases.

pub mod abc_calibration;
pub mod abs_bias;
pub mod error;
pub mod harness;
pub mod kv;
pub mod matrix_io;
pub mod scalar;
pub mod task_data;
pub mod transformer;

pub use error::{LabError, Result};
pub use scalar::Scalar;

/// Single-precision model, the default for training and checkpoints.
pub type Model = transformer::Transformer<f32>;
/// Double-precision model used by gradient checks.
pub type Model64 = transformer::Transformer<f64>;
pub type Trainer32 = transformer::Trainer<f32>;
pub type BiasSet32 = transformer::BiasSet<f32>;
pub type BiasSet64 = transformer::BiasSet<f64>;
pub type AttentionTensor32 = transformer::AttentionTensor<f32>;
pub type ExtendedBias32 = abc_calibration::ExtendedBias<f32>;
pub type ExtendedBias64 = abc_calibration::ExtendedBias<f64>;
pub type Calibration32 = abc_calibration::Calibration<f32>;
