use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar type the whole stack is generic over.
///
/// Implemented for `f32` and `f64`. Everything ndarray needs for fast
/// matrix products comes in through [`NdFloat`].
pub trait Scalar:
    NdFloat + Float + FromPrimitive + ToPrimitive + Default + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for hyperparameters and constants.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
