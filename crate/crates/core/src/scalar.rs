//! Scalar abstraction shared by every kernel in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of volumes, fields and tensors.
///
/// Implemented for `f32` (the storage type of every on-disk artifact) and
/// `f64` (used where extra headroom matters, e.g. gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; panics only for values outside the type's range.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_f32_bits(v: f32) -> Self {
        Self::from_f32(v).expect("f32 always converts")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
