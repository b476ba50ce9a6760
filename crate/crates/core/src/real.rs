//! Arbitrary-precision real scalar.
//!
//! [`Real`] wraps an MPFR float. Binary operations produce a result at the
//! larger of the two operand precisions, so a computation seeded at some
//! precision stays there. Values created from nothing (`Real::from_f64`,
//! `Zero::zero`, parsing) use the thread's *working precision*, which is
//! installed by [`PrecisionConfig::install`](crate::PrecisionConfig::install)
//! and restored when the returned guard drops.

use std::cell::Cell;
use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign,
};

use num_traits::{Num, One, Zero};
use rug::float::Round;
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Significand bits used when nothing else has been installed.
pub const DEFAULT_BITS: u32 = 256;

thread_local! {
    static WORKING_BITS: Cell<u32> = const { Cell::new(DEFAULT_BITS) };
}

/// Current working precision of this thread, in significand bits.
pub fn working_bits() -> u32 {
    WORKING_BITS.with(|b| b.get())
}

/// Restores the previous working precision on drop.
#[must_use = "the precision is restored as soon as the guard is dropped"]
pub struct BitsGuard {
    previous: u32,
}

impl Drop for BitsGuard {
    fn drop(&mut self) {
        WORKING_BITS.with(|b| b.set(self.previous));
    }
}

/// Sets the working precision of this thread until the guard is dropped.
pub fn set_working_bits(bits: u32) -> BitsGuard {
    let previous = WORKING_BITS.with(|b| b.replace(bits));
    BitsGuard { previous }
}

/// Complex numbers over [`Real`].
pub type Complex = num_complex::Complex<Real>;

/// Modulus of a complex number.
pub fn cabs(z: &Complex) -> Real {
    z.norm_sqr().sqrt()
}

#[derive(Clone, PartialEq, PartialOrd)]
pub struct Real(Float);

impl Real {
    pub fn from_float(f: Float) -> Self {
        Real(f)
    }

    pub fn as_float(&self) -> &Float {
        &self.0
    }

    pub fn from_f64(v: f64) -> Self {
        assert!(v.is_finite(), "non-finite literal {v}");
        Real(Float::with_val(working_bits(), v))
    }

    pub fn from_i64(v: i64) -> Self {
        Real(Float::with_val(working_bits(), v))
    }

    pub fn from_usize(v: usize) -> Self {
        Real(Float::with_val(working_bits(), v))
    }

    /// Exact rational `num/den` rounded once.
    pub fn ratio(num: i64, den: i64) -> Self {
        let n = Float::with_val(working_bits(), num);
        Real(Float::with_val(working_bits(), n / den))
    }

    /// `2^exp` at working precision.
    pub fn exp2(exp: i32) -> Self {
        let one = Float::with_val(working_bits(), 1);
        Real(one << exp)
    }

    /// Unit roundoff `2^(1-bits)` for the working precision.
    pub fn epsilon() -> Self {
        Self::exp2(1 - working_bits() as i32)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        let parsed = Float::parse(trimmed)
            .map_err(|e| Error::Parse(format!("{trimmed:?}: {e}")))?;
        let value = Float::with_val(working_bits(), parsed);
        if !value.is_finite() {
            return Err(Error::Parse(format!("{trimmed:?} is not finite")));
        }
        Ok(Real(value))
    }

    pub fn prec(&self) -> u32 {
        self.0.prec()
    }

    /// Same value rounded (or extended) to `bits`.
    pub fn to_prec(&self, bits: u32) -> Self {
        Real(Float::with_val(bits, &self.0))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    pub fn sqrt(&self) -> Self {
        Real(self.0.clone().sqrt())
    }

    pub fn abs(&self) -> Self {
        Real(self.0.clone().abs())
    }

    pub fn recip(&self) -> Self {
        Real(self.0.clone().recip())
    }

    pub fn square(&self) -> Self {
        Real(self.0.clone().square())
    }

    pub fn powi(&self, n: i32) -> Self {
        Real(self.0.clone().pow(n))
    }

    pub fn ln(&self) -> Self {
        Real(self.0.clone().ln())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_sign_negative(&self) -> bool {
        self.0.is_sign_negative() && !self.0.is_zero()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    /// −1, 0 or 1.
    pub fn signum_i(&self) -> i32 {
        match self.0.cmp0() {
            Some(Ordering::Less) => -1,
            Some(Ordering::Greater) => 1,
            _ => 0,
        }
    }

    pub fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// Correctly rounded `Σ a_i b_i` at the larger operand precision.
    pub fn dot(a: &[Real], b: &[Real]) -> Real {
        debug_assert_eq!(a.len(), b.len());
        let prec = a
            .iter()
            .chain(b.iter())
            .map(Real::prec)
            .max()
            .unwrap_or_else(working_bits);
        let pairs = a.iter().zip(b).map(|(x, y)| (&x.0, &y.0));
        Real(Float::with_val(prec, Float::dot(pairs)))
    }

    /// Significant-digit decimal form that parses back to the same digits.
    pub fn to_decimal(&self, digits: usize) -> String {
        if self.0.is_zero() {
            return "0".to_string();
        }
        self.0
            .to_string_radix_round(10, Some(digits.max(2)), Round::Nearest)
    }

    /// Decimal digits carried by a significand of `bits` bits.
    pub fn digits_for_bits(bits: u32) -> usize {
        (bits as f64 * std::f64::consts::LOG10_2).floor() as usize
    }
}

fn max_prec(a: &Real, b: &Real) -> u32 {
    a.0.prec().max(b.0.prec())
}

macro_rules! real_binop {
    ($Op:ident, $method:ident, $OpAssign:ident, $assign:ident) => {
        impl $Op<&Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                Real(Float::with_val(max_prec(self, rhs), (&self.0).$method(&rhs.0)))
            }
        }
        impl $Op<&Real> for Real {
            type Output = Real;
            fn $method(mut self, rhs: &Real) -> Real {
                if self.0.prec() >= rhs.0.prec() {
                    self.0.$assign(&rhs.0);
                    self
                } else {
                    (&self).$method(rhs)
                }
            }
        }
        impl $Op<Real> for Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                self.$method(&rhs)
            }
        }
        impl $Op<Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                self.$method(&rhs)
            }
        }
        impl $Op<f64> for &Real {
            type Output = Real;
            fn $method(self, rhs: f64) -> Real {
                Real(Float::with_val(self.0.prec(), (&self.0).$method(rhs)))
            }
        }
        impl $Op<f64> for Real {
            type Output = Real;
            fn $method(mut self, rhs: f64) -> Real {
                self.0.$assign(rhs);
                self
            }
        }
        impl $OpAssign<&Real> for Real {
            fn $assign(&mut self, rhs: &Real) {
                if self.0.prec() < rhs.0.prec() {
                    self.0.set_prec(rhs.0.prec());
                }
                self.0.$assign(&rhs.0);
            }
        }
        impl $OpAssign<Real> for Real {
            fn $assign(&mut self, rhs: Real) {
                self.$assign(&rhs);
            }
        }
        impl $OpAssign<f64> for Real {
            fn $assign(&mut self, rhs: f64) {
                self.0.$assign(rhs);
            }
        }
    };
}

real_binop!(Add, add, AddAssign, add_assign);
real_binop!(Sub, sub, SubAssign, sub_assign);
real_binop!(Mul, mul, MulAssign, mul_assign);
real_binop!(Div, div, DivAssign, div_assign);

impl Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real(-self.0)
    }
}

impl Neg for &Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real(-self.0.clone())
    }
}

impl Rem for Real {
    type Output = Real;
    fn rem(self, rhs: Real) -> Real {
        let q = (&self / &rhs).0.trunc();
        let prod = Real(q) * &rhs;
        self - prod
    }
}

impl PartialEq<f64> for Real {
    fn eq(&self, other: &f64) -> bool {
        self.0 == *other
    }
}

impl PartialOrd<f64> for Real {
    fn partial_cmp(&self, other: &f64) -> Option<Ordering> {
        self.0.partial_cmp(other)
    }
}

impl Zero for Real {
    fn zero() -> Self {
        Real(Float::with_val(working_bits(), 0))
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Real {
    fn one() -> Self {
        Real(Float::with_val(working_bits(), 1))
    }
}

impl Num for Real {
    type FromStrRadixErr = Error;
    fn from_str_radix(text: &str, radix: u32) -> Result<Self> {
        if radix != 10 {
            return Err(Error::Parse(format!("radix {radix} unsupported")));
        }
        Real::parse(text)
    }
}

impl Sum for Real {
    fn sum<I: Iterator<Item = Real>>(iter: I) -> Real {
        iter.fold(Real::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Real> for Real {
    fn sum<I: Iterator<Item = &'a Real>>(iter: I) -> Real {
        iter.fold(Real::zero(), |acc, x| acc + x)
    }
}

impl fmt::Debug for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal(20))
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().unwrap_or(17);
        f.pad(&self.to_decimal(digits))
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real::from_f64(v)
    }
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_decimal(Real::digits_for_bits(self.prec()) + 2))
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Text(t) => Real::parse(&t).map_err(serde::de::Error::custom),
            Repr::Number(v) if v.is_finite() => Ok(Real::from_f64(v)),
            Repr::Number(v) => Err(serde::de::Error::custom(format!("non-finite {v}"))),
        }
    }
}
