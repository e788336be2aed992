//! Threshold constants used by scheduler decision rules.
//!
//! The golden ratio, the real root of `2x^3 - 3x^2 - 1`, and `(sqrt(3)-1)/2`
//! are irrational. Decision rules compare expressions like `xi * C` against
//! exact rationals, and adversarial instances sit on those knife edges, so the
//! constants are kept as rational enclosures `(lo, hi)` that bisection narrows
//! until a comparison is decided. A rational operand can never equal the
//! irrational constant, so every comparison terminates.

use std::cmp::Ordering;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

use crate::scalar::Scalar;

/// Default enclosure width used when callers do not request a precision.
pub fn default_width() -> Scalar {
    let mut w = BigRational::one();
    let ten = BigRational::from_integer(BigInt::from(10));
    for _ in 0..30 {
        w /= &ten;
    }
    Scalar::Finite(w)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Kind {
    Rational(BigRational),
    /// Root of the stored polynomial (coefficients lowest-degree first),
    /// bracketed by `[lo, hi]` with `f(lo) < 0 < f(hi)`.
    Root {
        coeffs: Vec<i64>,
        lo: BigRational,
        hi: BigRational,
    },
}

/// A comparison-exact constant: a rational, or an algebraic irrational kept as
/// a refinable enclosure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdConstant {
    kind: Kind,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl ThresholdConstant {
    pub fn rational(value: Scalar) -> Self {
        let r = value
            .as_rational()
            .expect("threshold constants are finite")
            .clone();
        ThresholdConstant {
            kind: Kind::Rational(r),
        }
    }

    /// Golden ratio, the positive root of `x^2 - x - 1`.
    pub fn phi() -> Self {
        ThresholdConstant {
            kind: Kind::Root {
                coeffs: vec![-1, -1, 1],
                lo: rat(1, 1),
                hi: rat(2, 1),
            },
        }
    }

    /// Real root of `2x^3 - 3x^2 - 1`, about 1.678.
    pub fn xi() -> Self {
        ThresholdConstant {
            kind: Kind::Root {
                coeffs: vec![-1, 0, -3, 2],
                lo: rat(3, 2),
                hi: rat(2, 1),
            },
        }
    }

    /// `(sqrt(3) - 1) / 2`, the positive root of `2x^2 + 2x - 1`.
    pub fn psi() -> Self {
        ThresholdConstant {
            kind: Kind::Root {
                coeffs: vec![-1, 2, 2],
                lo: rat(0, 1),
                hi: rat(1, 1),
            },
        }
    }

    /// Evaluates the defining polynomial at `x`.
    fn poly(coeffs: &[i64], x: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for &c in coeffs.iter().rev() {
            acc = acc * x + BigRational::from_integer(BigInt::from(c));
        }
        acc
    }

    /// Enclosure `(lo, hi)` with `hi - lo <= width` and `lo < value < hi`
    /// (degenerate equal pair for rational constants). Bisection overshoots to
    /// a quarter of the requested width so the bracket hugs the root rather
    /// than straddling a coarse dyadic boundary.
    pub fn enclosure(&self, width: &Scalar) -> (Scalar, Scalar) {
        let w = width.as_rational().expect("finite width");
        assert!(w.is_positive(), "width must be positive");
        match &self.kind {
            Kind::Rational(r) => (Scalar::Finite(r.clone()), Scalar::Finite(r.clone())),
            Kind::Root { coeffs, lo, hi } => {
                let target = w * rat(1, 4);
                let (mut lo, mut hi) = (lo.clone(), hi.clone());
                let half = rat(1, 2);
                while &hi - &lo > target {
                    let mid = (&lo + &hi) * &half;
                    if Self::poly(coeffs, &mid).is_negative() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (Scalar::Finite(lo), Scalar::Finite(hi))
            }
        }
    }

    /// Midpoint of the enclosure at `width`; a plain rational stand-in for the
    /// constant when building concrete instances.
    pub fn approx(&self, width: &Scalar) -> Scalar {
        match &self.kind {
            Kind::Rational(r) => Scalar::Finite(r.clone()),
            _ => {
                let (lo, hi) = self.enclosure(width);
                (lo + hi) * Scalar::ratio(1, 2)
            }
        }
    }

    /// Exact sign of `self * factor - rhs` for finite non-negative `factor`.
    ///
    /// `rhs = inf` compares greater than any finite product. A zero factor
    /// collapses the product to an exact zero.
    pub fn cmp_product(&self, factor: &Scalar, rhs: &Scalar) -> Ordering {
        if rhs.is_infinite() {
            return Ordering::Less;
        }
        let f = factor.as_rational().expect("finite factor");
        assert!(!f.is_negative(), "negative threshold factor");
        let r = rhs.as_rational().unwrap();
        if f.is_zero() {
            return BigRational::zero().cmp(r);
        }
        match &self.kind {
            Kind::Rational(c) => (c * f).cmp(r),
            Kind::Root { coeffs, lo, hi } => {
                let (mut lo, mut hi) = (lo.clone(), hi.clone());
                let half = rat(1, 2);
                loop {
                    if &lo * f > *r {
                        return Ordering::Greater;
                    }
                    if &hi * f < *r {
                        return Ordering::Less;
                    }
                    // Rational tie against an irrational root cannot occur,
                    // so the bracket eventually excludes r/f.
                    let mid = (&lo + &hi) * &half;
                    if Self::poly(coeffs, &mid).is_negative() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
        }
    }

    /// Exact sign of `self - rhs`.
    pub fn cmp_scalar(&self, rhs: &Scalar) -> Ordering {
        self.cmp_product(&Scalar::one(), rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn width(exp: u32) -> Scalar {
        let mut s = "1".to_string();
        s.push('e');
        s.push('-');
        s.push_str(&exp.to_string());
        s.parse().unwrap()
    }

    #[test]
    fn phi_enclosure() {
        // phi = 1.6180339887498948...; it sits ~1e-13 below the last digit
        // boundary, so ask for a width well beyond it.
        let (lo, hi) = ThresholdConstant::phi().enclosure(&width(14));
        assert!(lo < hi);
        assert!(lo > "1.618033988749".parse().unwrap());
        assert!(hi < "1.618033988750".parse().unwrap());
    }

    #[test]
    fn xi_enclosure_digits() {
        let xi = ThresholdConstant::xi();
        let (lo, hi) = xi.enclosure(&width(3));
        assert!(lo > "1.677".parse().unwrap());
        assert!(hi < "1.679".parse().unwrap());
        let (lo, hi) = xi.enclosure(&width(12));
        assert!(lo > "1.677".parse().unwrap());
        assert!(hi < "1.678".parse().unwrap());
        // Bisection invariant: f(lo) < 0 < f(hi).
        let f = |x: &Scalar| {
            let x = x.as_rational().unwrap();
            ThresholdConstant::poly(&[-1, 0, -3, 2], x)
        };
        assert!(f(&lo).is_negative());
        assert!(f(&hi).is_positive());
    }

    #[test]
    fn psi_value() {
        // psi = (sqrt(3)-1)/2 ~ 0.3660254
        let (lo, hi) = ThresholdConstant::psi().enclosure(&width(9));
        assert!(lo > "0.366025403".parse().unwrap());
        assert!(hi < "0.366025404".parse().unwrap());
    }

    #[test]
    fn product_comparisons() {
        let xi = ThresholdConstant::xi();
        // xi * 1 vs phi-approx: xi > 1.618...
        assert_eq!(
            xi.cmp_product(&Scalar::one(), &"1.618034".parse().unwrap()),
            Ordering::Greater
        );
        assert_eq!(
            xi.cmp_product(&Scalar::one(), &"1.679".parse().unwrap()),
            Ordering::Less
        );
        // Zero factor collapses exactly.
        assert_eq!(
            xi.cmp_product(&Scalar::zero(), &Scalar::zero()),
            Ordering::Equal
        );
        assert_eq!(xi.cmp_product(&Scalar::one(), &Scalar::Infinite), Ordering::Less);
        // Rational constants compare directly.
        let two = ThresholdConstant::rational(Scalar::from_int(2));
        assert_eq!(
            two.cmp_product(&Scalar::ratio(1, 2), &Scalar::one()),
            Ordering::Equal
        );
    }

    #[test]
    fn phi_identity_within_enclosure() {
        // phi^2 = phi + 1 holds to enclosure width.
        let phi = ThresholdConstant::phi().approx(&width(20));
        let lhs = &phi * &phi;
        let rhs = &phi + &Scalar::one();
        let diff = if lhs > rhs { lhs - &rhs } else { rhs - &lhs };
        assert!(diff < width(15));
    }
}
