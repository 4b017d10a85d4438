//! Scalar abstraction so the numerical core runs on either `f32` or `f64`.
//!
//! All file formats and the CLI pin `f64` (see the crate-root aliases); the
//! generic parameter exists so the math itself is precision-agnostic.

use std::fmt;

/// Floating-point scalar usable throughout the numerical core.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
