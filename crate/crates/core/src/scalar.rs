//! Scalar abstraction shared by the geometric and information-theoretic code.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Real scalar usable by the generic math: `f32`, `f64`, or any other
/// nalgebra `RealField` that can be built from primitive literals.
pub trait Real: RealField + Copy + FromPrimitive {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let pi = T::pi();
    let mut w = a - two_pi * ((a + pi) / two_pi).floor();
    // floor maps exactly -pi onto -pi; move it to the closed end.
    if w <= -pi {
        w += two_pi;
    }
    w
}
