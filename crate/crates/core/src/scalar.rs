//! Scalar abstraction shared by the exact (deterministic) parts of the crate.
//!
//! Graphs, generators, spectra and duality functions are written against
//! [`Scalar`] so they can be evaluated in `f32` or `f64`. Monte Carlo code and
//! the experiment harness work in `f64` directly.

use nalgebra::RealField;
use num_traits::ToPrimitive;
use std::fmt::{Debug, Display};

/// Real scalar usable by the exact linear-algebra routines.
pub trait Scalar: RealField + ToPrimitive + Copy + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier-compensated sum.
pub fn compensated_sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1.0f64, 1e-16, 1e-16, 1e-16, -1.0];
        assert!((compensated_sum(v) - 3e-16).abs() < 1e-30);
    }

    #[test]
    fn literal_conversion_f32() {
        assert_eq!(<f32 as Scalar>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Scalar>::count(7), 7.0);
    }
}
