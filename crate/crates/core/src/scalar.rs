//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the signal, feature and tree code is written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless for both supported widths when going up to f64.
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("f32/f64 always convert to f64")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 always converts to a float type")
    }

    fn from_usize_exact(v: usize) -> Self {
        Self::from_usize(v).expect("usize always converts to a float type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `1/2` in the target precision.
#[inline]
pub(crate) fn half<T: Scalar>() -> T {
    T::from_f64_lossy(0.5)
}

#[inline]
pub(crate) fn two<T: Scalar>() -> T {
    T::one() + T::one()
}
