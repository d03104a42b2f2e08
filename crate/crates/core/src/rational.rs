//! Exact rational arithmetic for coefficient generation.
//!
//! All stencil weights are produced in `Rational` (arbitrary-precision, always
//! reduced, positive denominator) and converted to floating point only when a
//! stencil is applied to data. Equality of two coefficient routes is therefore
//! a strict equality test, not a tolerance comparison.

use num::bigint::BigInt;
use num::rational::Ratio;
use num::traits::ToPrimitive;
use num::{One, Zero};

/// Arbitrary-precision rational number in canonical form.
pub type Rational = Ratio<BigInt>;

/// Rational from an integer.
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Rational `n / d`. Panics if `d == 0`.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `n!` as a rational.
pub fn factorial(n: usize) -> Rational {
    let mut acc = BigInt::one();
    for i in 2..=n {
        acc *= BigInt::from(i);
    }
    Rational::from_integer(acc)
}

/// Harmonic number `1 + 1/2 + ... + 1/k` (zero for `k = 0`).
pub fn harmonic(k: usize) -> Rational {
    let mut acc = Rational::zero();
    for i in 1..=k {
        acc += ratio(1, i as i64);
    }
    acc
}

/// Generalized binomial coefficient for rational (or negative) upper index:
/// `C(r, 0) = 1`, `C(r, k) = r (r-1) ⋯ (r-k+1) / k!`.
pub fn binomial(r: &Rational, k: usize) -> Rational {
    let mut num = Rational::one();
    for j in 0..k {
        num *= r - rat(j as i64);
    }
    num / factorial(k)
}

/// Integer binomial coefficient `C(n, k)`.
pub fn binomial_int(n: usize, k: usize) -> Rational {
    if k > n {
        return Rational::zero();
    }
    binomial(&rat(n as i64), k)
}

/// Exact power with a signed integer exponent.
pub fn powi(base: &Rational, exp: i32) -> Rational {
    base.pow(exp)
}

/// Conversion to `f64`, used once per stencil application.
pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("rational magnitude representable as f64")
}

/// Formats a rational as `num/den`, or just `num` when the denominator is 1.
pub fn display_compact(r: &Rational) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"3"`, `"-3"`, `"3/4"`, or `"-3/4"`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                None
            } else {
                Some(ratio(n, d))
            }
        }
        None => {
            let n: i64 = s.parse().ok()?;
            Some(rat(n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form() {
        let r = ratio(-4, -6);
        assert_eq!(r, ratio(2, 3));
        assert!(r.denom() > &BigInt::zero());
        let r = ratio(4, -6);
        assert_eq!(r, ratio(-2, 3));
        assert!(r.denom() > &BigInt::zero());
    }

    #[test]
    fn generalized_binomial_values() {
        // C(-1/2, 2) = (-1/2)(-3/2)/2 = 3/8
        assert_eq!(binomial(&ratio(-1, 2), 2), ratio(3, 8));
        // C(r, 0) = 1 for any r
        assert_eq!(binomial(&ratio(7, 3), 0), rat(1));
        // integer case agrees with C(5, 2) = 10
        assert_eq!(binomial(&rat(5), 2), rat(10));
        assert_eq!(binomial_int(13, 6), rat(1716));
        // upper index below k: C(2, 3) = 0 via the falling factorial
        assert_eq!(binomial(&rat(2), 3), rat(0));
    }

    #[test]
    fn harmonic_and_factorial() {
        assert_eq!(harmonic(0), rat(0));
        assert_eq!(harmonic(3), ratio(11, 6));
        assert_eq!(factorial(0), rat(1));
        assert_eq!(factorial(6), rat(720));
    }

    #[test]
    fn parse_and_display_roundtrip() {
        for s in ["3", "-3", "3/4", "-3/4", "1/2"] {
            let r = parse_rational(s).unwrap();
            assert_eq!(display_compact(&r), s);
        }
        assert!(parse_rational("1/0").is_none());
        assert!(parse_rational("x").is_none());
    }
}
