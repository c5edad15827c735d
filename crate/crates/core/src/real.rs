//! Scalar abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar the solvers are generic over: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// `max(spec_value, factor * machine_epsilon)`: a tolerance that stays
    /// attainable in lower precision types.
    #[inline]
    fn tol(spec_value: f64, factor: f64) -> Self {
        Self::lit(spec_value).max(Self::lit(factor) * Self::epsilon())
    }
}

impl Real for f32 {}
impl Real for f64 {}
