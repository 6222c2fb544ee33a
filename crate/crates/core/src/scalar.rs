//! Scalar abstraction for the state algebra and the generic numerical helpers.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Tolerance appropriate for "exactly zero" checks at this precision.
    fn eps_zero() -> Self;
}

impl Real for f32 {
    #[inline]
    fn eps_zero() -> Self {
        1e-6
    }
}

impl Real for f64 {
    #[inline]
    fn eps_zero() -> Self {
        1e-12
    }
}
