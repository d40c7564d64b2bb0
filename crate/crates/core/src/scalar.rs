//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real field the GP machinery is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Panics only if the value is unrepresentable,
    /// which cannot happen for the finite constants used in this crate.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean, `None` for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::from_count(xs.len()))
}

/// Population variance (divides by `n`).
pub fn variance<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    Some(xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_count(xs.len()))
}
