//! Floating-point element types a [`Tensor`](crate::Tensor) can carry.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::dd::Dd;

/// Element type of a tensor. Implemented for `f32` (benchmark paths) and
/// `f64` (gradient checks and oracles), plus [`Dd`] for finite differences.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name used in reports (`"f32"`, `"f64"`).
    const NAME: &'static str;

    fn cast(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_count(n: usize) -> Self {
        Self::cast(n as f64)
    }

}

/// Sum of an iterator of scalars, left to right.
pub fn total<T: Scalar>(it: impl IntoIterator<Item = T>) -> T {
    it.into_iter().fold(T::zero(), |a, b| a + b)
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for Dd {
    const NAME: &'static str = "dd";

    #[inline]
    fn cast(v: f64) -> Self {
        Dd::new(v)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64_lossy()
    }
}


