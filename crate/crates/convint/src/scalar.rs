//! Scalar abstraction for the whole crate.
//!
//! All numerics are generic over [`Real`], which is satisfied by `f32` and
//! `f64`. Tolerances and literal constants go through [`real`] so modules can
//! be instantiated at either precision; the shipped tests and the CLI run at
//! `f64`.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable everywhere in this crate.
pub trait Real:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Default + std::fmt::LowerExp
{
    /// Machine epsilon for the type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` literal into `T`.
///
/// Panics only if `T` cannot represent finite `f64` values at all, which no
/// implementor of [`Real`] does.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 literal must be representable")
}

/// Lossy view of a scalar as `f64`, for reports and diagnostics.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
