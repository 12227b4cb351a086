//! Scalar abstraction shared by the geometry, fusion and refinement code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the pipeline is generic over. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + nalgebra::Scalar
    + Copy
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Relative slack used for inclusive distance comparisons.
    fn rel_tol() -> Self;
    /// Maximum accepted `|RᵀR − I|` entry for a rotation.
    fn ortho_tol() -> Self;
    /// Maximum accepted deviation of a distribution sum from one.
    fn sum_tol() -> Self;
}

impl Real for f32 {
    fn rel_tol() -> Self {
        8.0 * f32::EPSILON
    }
    fn ortho_tol() -> Self {
        1e-4
    }
    fn sum_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn rel_tol() -> Self {
        1e-9
    }
    fn ortho_tol() -> Self {
        1e-6
    }
    fn sum_tol() -> Self {
        1e-9
    }
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts the working scalar to `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar representable as f64")
}
