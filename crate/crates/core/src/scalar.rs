//! Scalar abstraction shared by the statistical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar used throughout the inference code.
///
/// Geometry and electromagnetics stay in `f64`; everything downstream of the
/// channel power matrix (quantiles, priors, conditioning, selection, rate
/// decisions) is written against this trait.
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
    + 'static
{
    /// Lossy conversion from an `f64` literal or configuration value.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Relative tolerance used when clamping round-off (negative variances,
    /// symmetry checks). Never tighter than `1e-10`.
    #[inline]
    fn round_off() -> Self {
        Self::of(1e-10).max(Self::epsilon() * Self::of(1e3))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Location in the prediction space, meters.
pub type Point<T> = [T; 3];

#[inline]
pub(crate) fn distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Median of a slice; `None` when empty or when it contains NaN.
pub(crate) fn median<T: Real>(values: &[T]) -> Option<T> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::of(2.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_off_floor() {
        assert_eq!(f64::round_off(), 1e-10);
        assert!(f32::round_off() > 1e-5);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median::<f64>(&[]), None);
    }
}
