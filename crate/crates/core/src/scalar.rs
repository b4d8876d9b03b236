//! Scalar abstractions shared by the geometry, estimators and trap modules.
//!
//! Event definitions compare integer lattice displacements against real
//! thresholds (`V ≥ v`, `x ∈ [a, b)`), so every such comparison is written
//! against [`Scalar`]. `f64` is convenient for exploration; [`Rational`] makes
//! half-open boundaries exact.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, Num, Signed};

/// Exact rational used for real-valued anchors and speed thresholds.
pub type Rational = Ratio<i64>;

/// Largest denominator used when converting a float into a [`Rational`].
pub const MAX_DENOMINATOR: i64 = 1_000_000;

/// A real-like ordered field with exact integer rounding.
pub trait Scalar: Copy + Debug + PartialOrd + Num + Signed + Send + Sync + 'static {
    fn from_i64(v: i64) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn floor_i64(&self) -> i64;
    fn ceil_i64(&self) -> i64;
}

macro_rules! impl_float_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            fn from_i64(v: i64) -> Self {
                v as $f
            }
            fn from_f64(v: f64) -> Self {
                v as $f
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn floor_i64(&self) -> i64 {
                Float::floor(*self) as i64
            }
            fn ceil_i64(&self) -> i64 {
                Float::ceil(*self) as i64
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Rational {
    fn from_i64(v: i64) -> Self {
        Ratio::from_integer(v)
    }
    fn from_f64(v: f64) -> Self {
        limit_denominator(v, MAX_DENOMINATOR)
    }
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
    fn floor_i64(&self) -> i64 {
        self.floor().to_integer()
    }
    fn ceil_i64(&self) -> i64 {
        self.ceil().to_integer()
    }
}

/// Closest fraction to `v` with denominator at most `max_den`, found by
/// walking the continued-fraction convergents and checking the last
/// semiconvergent.
pub fn limit_denominator(v: f64, max_den: i64) -> Rational {
    assert!(v.is_finite(), "cannot convert non-finite value {v} to a rational");
    assert!(max_den >= 1);
    let sign = if v < 0.0 { -1 } else { 1 };
    let x = v.abs();
    let whole = x.floor();
    if whole >= i64::MAX as f64 / 2.0 {
        panic!("value {v} too large for a 64-bit rational");
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut rem = x;
    loop {
        let a = rem.floor();
        let ai = a as i64;
        let q2 = q0 + ai * q1;
        if q2 > max_den {
            // semiconvergent: largest t with q0 + t*q1 <= max_den
            let t = (max_den - q0) / q1;
            let (ps, qs) = (p0 + t * p1, q0 + t * q1);
            let cand_semi = Ratio::new(ps, qs);
            let cand_conv = Ratio::new(p1, q1);
            let err = |r: &Rational| (r.to_f64() - x).abs();
            let best = if err(&cand_semi) < err(&cand_conv) { cand_semi } else { cand_conv };
            return best * sign;
        }
        let p2 = p0 + ai * p1;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = rem - a;
        if frac < 1e-12 || (Ratio::new(p1, q1).to_f64() - x).abs() == 0.0 {
            return Ratio::new(p1, q1) * sign;
        }
        rem = 1.0 / frac;
    }
}

/// Integer floor division (rounds toward negative infinity).
pub fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_inputs_become_small_fractions() {
        assert_eq!(Rational::from_f64(0.2), Ratio::new(1, 5));
        assert_eq!(Rational::from_f64(-0.25), Ratio::new(-1, 4));
        assert_eq!(Rational::from_f64(1.0 / 3.0), Ratio::new(1, 3));
        assert_eq!(Rational::from_f64(0.45), Ratio::new(9, 20));
        assert_eq!(Rational::from_f64(3.0), Ratio::from_integer(3));
        assert_eq!(Rational::from_f64(0.0), Ratio::from_integer(0));
    }

    #[test]
    fn rounding_is_exact_for_rationals() {
        let r = Ratio::new(-7, 2);
        assert_eq!(r.floor_i64(), -4);
        assert_eq!(r.ceil_i64(), -3);
        assert_eq!(Ratio::new(6, 3).floor_i64(), 2);
        assert_eq!(Ratio::new(6, 3).ceil_i64(), 2);
    }

    #[test]
    fn floor_division() {
        assert_eq!(div_floor(37, 10), 3);
        assert_eq!(div_floor(-1, 10), -1);
        assert_eq!(div_floor(-10, 10), -1);
        assert_eq!(div_floor(-11, 10), -2);
        assert_eq!(div_floor(0, 10), 0);
    }

    #[test]
    fn irrational_inputs_respect_denominator_bound() {
        let r = limit_denominator(std::f64::consts::PI, 1000);
        assert_eq!(r, Ratio::new(355, 113));
        let r = limit_denominator(std::f64::consts::E, MAX_DENOMINATOR);
        assert!(*r.denom() <= MAX_DENOMINATOR);
        assert!((r.to_f64() - std::f64::consts::E).abs() < 1e-10);
    }
}
