//! Scalar abstraction shared by every numeric routine in the crate.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
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
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Numerically stable `ln(1 + e^x)`.
    #[inline]
    fn softplus(self) -> Self {
        let zero = Self::zero();
        if self > zero {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    #[inline]
    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
