//! Scalar abstraction for the numeric core.
//!
//! Everything below the model layer is generic over [`Scalar`] so the tensor
//! and gradient machinery can be exercised at `f32` or `f64`; the pipeline
//! itself runs entirely on `f64` via the aliases at the crate root.

use num_traits::Float;

/// Floating-point scalar usable by [`crate::tensor::Tensor`] and
/// [`crate::autodiff::Graph`].
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}
