//! Floating point abstraction used by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type: `f32` or `f64`.
///
/// Everything in `num_traits::Float` plus the complementary error function,
/// which the normal CDF needs and `Float` does not provide.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Default probability clamp. Must leave `1 - eps < 1` representable.
    const DEFAULT_EPSILON: f64;

    fn erfc(self) -> Self;

    /// Converts an `f64` literal. Panics only for values the type cannot hold,
    /// which never happens for the constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Scalar for f64 {
    const DEFAULT_EPSILON: f64 = 1e-14;

    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
}

impl Scalar for f32 {
    const DEFAULT_EPSILON: f64 = 1e-6;

    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Scalar> FromIterator<T> for CompensatedSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::<f64>::new();
        acc.add(1.0);
        for _ in 0..10 {
            acc.add(1e-16);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-15).abs() < 1e-30);
    }

    #[test]
    fn erfc_matches_known_values() {
        assert!((Scalar::erfc(0.0f64) - 1.0).abs() < 1e-15);
        assert!((Scalar::erfc(1.0f64) - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((Scalar::erfc(1.0f32) - 0.157_299_2).abs() < 1e-6);
    }

    #[test]
    fn default_epsilon_is_representable() {
        let one_minus = |eps: f64| 1.0 - eps;
        assert!(one_minus(<f64 as Scalar>::DEFAULT_EPSILON) < 1.0);
        let eps32 = <f32 as Scalar>::DEFAULT_EPSILON as f32;
        assert!(1.0f32 - std::hint::black_box(eps32) < 1.0);
    }
}
