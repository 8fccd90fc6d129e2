use ndarray::NdFloat;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type for models, attention tensors and biases.
///
/// Implemented for `f32` (training and checkpoints) and `f64` (gradient
/// checks and calibration oracles).
pub trait Scalar: NdFloat + Float + FromPrimitive + ToPrimitive + Default + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn neg_inf() -> Self {
        Float::neg_infinity()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
