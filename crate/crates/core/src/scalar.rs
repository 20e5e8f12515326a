//! Scalar abstraction shared by every analytic routine.
//!
//! The numerics are written once against [`Real`] and instantiated for `f32`
//! and `f64`. Special functions that `num_traits::Float` does not provide
//! (complementary error function, log-gamma) live on the trait.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Complementary error function.
    fn erfc(self) -> Self;

    /// Natural log of the gamma function for positive arguments.
    fn ln_gamma(self) -> Self;

    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f64 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }

    #[inline]
    fn ln_gamma(self) -> Self {
        libm::lgamma(self)
    }
}

impl Real for f32 {
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }

    #[inline]
    fn ln_gamma(self) -> Self {
        libm::lgammaf(self)
    }
}

/// Gaussian tail probability `Q(x) = P(U > x)` for a standard normal `U`.
#[inline]
pub fn q_function<T: Real>(x: T) -> T {
    T::lit(0.5) * (x / T::SQRT_2()).erfc()
}

/// `log(e^a + e^b)` without overflow.
#[inline]
pub fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(v_i)` over a slice.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum = values
        .iter()
        .fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

/// `ln C(n, k)` via log-gamma.
#[inline]
pub fn ln_choose<T: Real>(n: usize, k: usize) -> T {
    debug_assert!(k <= n);
    let one = T::one();
    (T::from_usize_lossy(n) + one).ln_gamma()
        - (T::from_usize_lossy(k) + one).ln_gamma()
        - (T::from_usize_lossy(n - k) + one).ln_gamma()
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlnx<T: Real>(x: T) -> T {
    if x <= T::zero() {
        T::zero()
    } else {
        x * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_reference_points() {
        assert!((q_function(0.0_f64) - 0.5).abs() < 1e-15);
        // Q(1.959963984540054) = 0.025
        assert!((q_function(1.959_963_984_540_054_f64) / 0.025 - 1.0).abs() < 1e-12);
        assert!((q_function(-3.0_f64) + q_function(3.0_f64) - 1.0).abs() < 1e-15);
        // deep tail stays relative-accurate
        let q10 = q_function(10.0_f64);
        assert!((q10 / 7.619_853_024_160_583e-24 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn log_add_exp_handles_extremes() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 2.0), 2.0);
        let v = log_add_exp(1000.0_f64, 1000.0);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0_f64, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ln_choose_small_values() {
        let v: f64 = ln_choose(10, 3);
        assert!((v.exp() - 120.0).abs() < 1e-9);
        let v32: f32 = ln_choose(10, 3);
        assert!((v32.exp() - 120.0).abs() < 1e-3);
    }
}
