//! Exact time/work arithmetic.
//!
//! All task sizes, arrival times and schedule timestamps are exact rationals,
//! with a distinguished `Infinite` value for tasks that must not run on one of
//! the two implementations (e.g. `sigma = inf` forces a parallel run). Scheduler
//! decision rules compare knife-edge adversarial quantities, so no floating
//! point is used anywhere on a decision path.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

/// An exact rational number extended with `+inf`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Scalar {
    Finite(BigRational),
    Infinite,
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar::Finite(BigRational::zero())
    }

    pub fn one() -> Self {
        Scalar::Finite(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::Finite(BigRational::from_integer(BigInt::from(n)))
    }

    /// Exact fraction `num/den`. Panics on `den == 0`.
    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Scalar::Finite(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_rational(r: BigRational) -> Self {
        Scalar::Finite(r)
    }

    /// 2^k for possibly negative k.
    pub fn pow2(k: i32) -> Self {
        let two = BigRational::from_integer(BigInt::from(2));
        let mut r = BigRational::one();
        for _ in 0..k.unsigned_abs() {
            r *= &two;
        }
        if k < 0 {
            r = r.recip();
        }
        Scalar::Finite(r)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Scalar::Infinite)
    }

    pub fn is_finite(&self) -> bool {
        !self.is_infinite()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Scalar::Finite(r) if r.is_zero())
    }

    pub fn is_negative(&self) -> bool {
        matches!(self, Scalar::Finite(r) if r.is_negative())
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Scalar::Finite(r) => r.is_positive(),
            Scalar::Infinite => true,
        }
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Scalar::Finite(r) => Some(r),
            Scalar::Infinite => None,
        }
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Multiplicative inverse; `1/inf = 0`. Panics on `1/0`.
    pub fn recip(&self) -> Self {
        match self {
            Scalar::Finite(r) => {
                assert!(!r.is_zero(), "division by zero");
                Scalar::Finite(r.recip())
            }
            Scalar::Infinite => Scalar::zero(),
        }
    }

    /// Lossy conversion for report rendering only.
    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Finite(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Infinite => f64::INFINITY,
        }
    }

    /// Canonical text form: `"inf"`, an integer string, or `"num/den"` reduced.
    pub fn canonical(&self) -> String {
        match self {
            Scalar::Infinite => "inf".to_string(),
            Scalar::Finite(r) => {
                if r.is_integer() {
                    r.numer().to_string()
                } else {
                    format!("{}/{}", r.numer(), r.denom())
                }
            }
        }
    }

    /// Decimal rendering with `digits` fractional digits, truncated toward zero,
    /// for report tables. Exact values travel alongside as `canonical`.
    pub fn decimal(&self, digits: usize) -> String {
        match self {
            Scalar::Infinite => "inf".to_string(),
            Scalar::Finite(r) => {
                let sign = if r.is_negative() { "-" } else { "" };
                let a = r.abs();
                let whole = a.to_integer();
                let mut frac = &a - BigRational::from_integer(whole.clone());
                let mut digs = String::new();
                for _ in 0..digits {
                    frac *= BigRational::from_integer(BigInt::from(10));
                    let d = frac.to_integer();
                    digs.push_str(&d.to_string());
                    frac -= BigRational::from_integer(d);
                }
                if digits == 0 {
                    format!("{sign}{whole}")
                } else {
                    format!("{sign}{whole}.{digs}")
                }
            }
        }
    }
}

/// Parse error for scalar text forms.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid scalar literal {0:?}")]
pub struct ParseScalarError(pub String);

impl FromStr for Scalar {
    type Err = ParseScalarError;

    /// Accepts `"inf"`, integers, `"num/den"` fractions and exact decimal
    /// strings like `"0.25"` or `"-3.5e-2"`. Decimal parsing is exact: the
    /// string `d.ddd` maps to `dddd/10^k` with no float round-trip.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let err = || ParseScalarError(s.to_string());
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Scalar::Infinite);
        }
        if let Some((num, den)) = t.split_once('/') {
            let n = BigInt::from_str(num.trim()).map_err(|_| err())?;
            let d = BigInt::from_str(den.trim()).map_err(|_| err())?;
            if d.is_zero() {
                return Err(err());
            }
            return Ok(Scalar::Finite(BigRational::new(n, d)));
        }
        // Optional exponent suffix.
        let (mantissa, exp) = match t.split_once(['e', 'E']) {
            Some((m, e)) => (m, i32::from_str(e).map_err(|_| err())?),
            None => (t, 0),
        };
        let (int_part, frac_part) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        let negative = int_part.starts_with('-');
        let digits: String = format!(
            "{}{}",
            int_part.trim_start_matches(['+', '-']),
            frac_part
        );
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let mut value = BigRational::new(
            BigInt::from_str(&digits).map_err(|_| err())?,
            BigInt::one(),
        );
        let shift = exp - frac_part.len() as i32;
        let ten = BigRational::from_integer(BigInt::from(10));
        for _ in 0..shift.unsigned_abs() {
            if shift > 0 {
                value *= &ten;
            } else {
                value /= &ten;
            }
        }
        if negative {
            value = -value;
        }
        Ok(Scalar::Finite(value))
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Infinite, Scalar::Infinite) => Ordering::Equal,
            (Scalar::Infinite, Scalar::Finite(_)) => Ordering::Greater,
            (Scalar::Finite(_), Scalar::Infinite) => Ordering::Less,
            (Scalar::Finite(a), Scalar::Finite(b)) => a.cmp(b),
        }
    }
}

impl Add for &Scalar {
    type Output = Scalar;
    fn add(self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Finite(a), Scalar::Finite(b)) => Scalar::Finite(a + b),
            _ => Scalar::Infinite,
        }
    }
}

impl Sub for &Scalar {
    type Output = Scalar;
    /// `inf - finite = inf`; `inf - inf` and `finite - inf` are undefined.
    fn sub(self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Finite(a), Scalar::Finite(b)) => Scalar::Finite(a - b),
            (Scalar::Infinite, Scalar::Finite(_)) => Scalar::Infinite,
            _ => panic!("undefined subtraction involving infinity"),
        }
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    /// `inf * x = inf` for `x > 0`; `inf * 0` is undefined.
    fn mul(self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Finite(a), Scalar::Finite(b)) => Scalar::Finite(a * b),
            (Scalar::Infinite, x) | (x, Scalar::Infinite) => {
                assert!(x.is_positive(), "undefined product of infinity and non-positive");
                Scalar::Infinite
            }
        }
    }
}

impl Div for &Scalar {
    type Output = Scalar;
    /// `inf / finite-positive = inf`, `finite / inf = 0`; `inf / inf` undefined.
    fn div(self, rhs: &Scalar) -> Scalar {
        match (self, rhs) {
            (Scalar::Finite(a), Scalar::Finite(b)) => {
                assert!(!b.is_zero(), "division by zero");
                Scalar::Finite(a / b)
            }
            (Scalar::Finite(_), Scalar::Infinite) => Scalar::zero(),
            (Scalar::Infinite, Scalar::Finite(b)) => {
                assert!(b.is_positive(), "undefined division of infinity");
                Scalar::Infinite
            }
            (Scalar::Infinite, Scalar::Infinite) => panic!("undefined inf / inf"),
        }
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Finite(r) => Scalar::Finite(-r),
            Scalar::Infinite => panic!("undefined negation of infinity"),
        }
    }
}

macro_rules! forward_owned {
    ($($trait:ident::$method:ident),*) => {$(
        impl $trait for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                $trait::$method(&self, &rhs)
            }
        }
        impl $trait<&Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                $trait::$method(&self, rhs)
            }
        }
        impl $trait<Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                $trait::$method(self, &rhs)
            }
        }
    )*};
}
forward_owned!(Add::add, Sub::sub, Mul::mul, Div::div);

impl serde::Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> serde::Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Scalar {
        text.parse().unwrap()
    }

    #[test]
    fn parse_forms() {
        assert_eq!(s("3/4"), Scalar::ratio(3, 4));
        assert_eq!(s("0.25"), Scalar::ratio(1, 4));
        assert_eq!(s("-3.5e-2"), Scalar::ratio(-35, 1000));
        assert_eq!(s("inf"), Scalar::Infinite);
        assert_eq!(s("7"), Scalar::from_int(7));
        assert!("1/0".parse::<Scalar>().is_err());
        assert!("x".parse::<Scalar>().is_err());
    }

    #[test]
    fn canonical_round_trip() {
        for text in ["0", "5", "-7/3", "1000001/7", "inf"] {
            assert_eq!(s(text).canonical(), text);
        }
        // Decimal strings normalize to reduced fractions.
        assert_eq!(s("0.5").canonical(), "1/2");
    }

    #[test]
    fn infinity_ordering_and_arith() {
        let inf = Scalar::Infinite;
        let two = Scalar::from_int(2);
        assert!(inf > two);
        assert_eq!(&inf + &two, inf);
        assert_eq!(&inf - &two, inf);
        assert_eq!(&two / &inf, Scalar::zero());
        assert_eq!(&inf * &two, inf);
        assert_eq!(inf.recip(), Scalar::zero());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(Scalar::ratio(1, 3).decimal(5), "0.33333");
        assert_eq!(Scalar::ratio(-1, 2).decimal(2), "-0.50");
        assert_eq!(Scalar::from_int(4).decimal(0), "4");
        assert_eq!(Scalar::Infinite.decimal(3), "inf");
    }

    #[test]
    fn pow2_values() {
        assert_eq!(Scalar::pow2(5), Scalar::from_int(32));
        assert_eq!(Scalar::pow2(-2), Scalar::ratio(1, 4));
        assert_eq!(Scalar::pow2(0), Scalar::one());
    }
}
