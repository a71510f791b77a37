//! Scalar abstractions shared by the exact and floating-point code paths.
//!
//! Integer matrices (`i64`), exact rationals ([`Rational`]) and floats all
//! satisfy [`Scalar`]; only fields ([`Field`]) support inversion, and only
//! [`Real`] types evaluate exponentials.

use std::fmt::Debug;
use std::iter::Sum;

use num_bigint::BigInt;
use num_traits::{Float, FloatConst, FromPrimitive, Num, One, Signed, ToPrimitive, Zero};

use crate::Rational;

/// Ring element usable as a matrix entry.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + Send + Sync + 'static
{
}

/// A scalar with exact or rounded division, constructible from a rational.
pub trait Field: Scalar {
    fn from_rational(q: &Rational) -> Self;

    fn from_int(v: i64) -> Self {
        Self::from_i64(v).expect("i64 is representable in every field")
    }
}

impl Field for f64 {
    fn from_rational(q: &Rational) -> Self {
        rational_to_f64(q)
    }
}

impl Field for f32 {
    fn from_rational(q: &Rational) -> Self {
        rational_to_f64(q) as f32
    }
}

impl Field for Rational {
    fn from_rational(q: &Rational) -> Self {
        q.clone()
    }

    fn from_int(v: i64) -> Self {
        Rational::from_integer(BigInt::from(v))
    }
}

/// Floating-point field used for trigonometric evaluation.
pub trait Real: Field + Float + FloatConst + Sum + Default {
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64")
    }
}

impl Real for f64 {}
impl Real for f32 {}

pub fn rational_to_f64(q: &Rational) -> f64 {
    // Ratio<BigInt>::to_f64 handles huge numerators/denominators without overflow.
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn is_integer(q: &Rational) -> bool {
    q.denom().is_one()
}

/// Fractional part in `[0, 1)`, exact.
pub fn frac(q: &Rational) -> Rational {
    q - q.floor()
}

pub fn to_bigint(v: i64) -> BigInt {
    BigInt::from(v)
}

pub fn rat_vec(v: &[i64]) -> Vec<Rational> {
    v.iter().map(|&x| int(x)).collect()
}

pub fn rat_vec_to_f64(v: &[Rational]) -> Vec<f64> {
    v.iter().map(rational_to_f64).collect()
}

/// Converts an integer rational vector back to `i64`, if every entry is integral and fits.
pub fn rat_vec_to_int(v: &[Rational]) -> Option<Vec<i64>> {
    v.iter()
        .map(|q| if is_integer(q) { q.numer().to_i64() } else { None })
        .collect()
}

pub fn is_zero_vec<T: Zero>(v: &[T]) -> bool {
    v.iter().all(Zero::is_zero)
}
