//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the library is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `log(1 + exp(x))`, stable for large `|x|`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else if x < T::lit(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]; `y` must be positive.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    debug_assert!(y > T::zero());
    if y > T::lit(30.0) {
        y
    } else {
        // log(exp(y) - 1) = y + log(1 - exp(-y))
        y + (-(-y).exp()).ln_1p()
    }
}

/// Derivative of softplus, the logistic sigmoid.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(mean(exp(w)))` with max subtraction.
pub fn log_mean_exp<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::neg_infinity();
    }
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&w| (w - max).exp()).sum();
    max + (sum / T::from_usize_lossy(values.len())).ln()
}

/// `log(sum(exp(w)))` with max subtraction.
pub fn log_sum_exp<T: Scalar>(values: impl IntoIterator<Item = T> + Clone) -> T {
    let max = values.clone().into_iter().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.into_iter().map(|w| (w - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-8_f64, 1e-3, 0.5, 1.0, 7.0, 45.0] {
            let back = softplus(softplus_inverse(y));
            assert!((back - y).abs() <= 1e-12 * y.max(1.0), "{y} -> {back}");
        }
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &x in &[-5.0_f64, -0.3, 0.0, 1.2, 8.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn log_mean_exp_handles_large_values() {
        let v = [1000.0_f64, 1000.0];
        assert!((log_mean_exp(&v) - 1000.0).abs() < 1e-12);
        let w = [0.0_f64, (3.0f64).ln()];
        assert!((log_mean_exp(&w) - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }
}
