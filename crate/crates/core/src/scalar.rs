//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating-point type the solvers are generic over.
///
/// Implemented for `f32` and `f64`. Binary containers always store `f64`
/// regardless of the in-memory precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + FftNum + Default + Display + LowerExp + Debug + Sum + Send + Sync
{
    /// Converts an `f64` literal, panicking only if the type cannot hold it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon as `f64`, handy for tolerance arithmetic.
    fn eps_f64() -> f64 {
        Self::epsilon().to_f64_lossy()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dot product of two equally sized slices.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Maximum absolute entry, zero for an empty slice.
#[inline]
pub fn max_abs<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// `true` when every entry is finite.
#[inline]
pub fn all_finite<T: Real>(a: &[T]) -> bool {
    a.iter().all(|x| x.is_finite())
}
