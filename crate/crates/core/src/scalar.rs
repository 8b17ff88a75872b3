//! Scalar abstraction for the engine's arithmetic.

use std::fmt;

/// Floating-point scalar the engine can compute in: `f32` or `f64`.
///
/// Everything shipped on top of this crate runs in `f64` (see the crate
/// root aliases); `f32` exists so the math stays type-agnostic.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_count(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}
