//! Fixed-point decimal arithmetic over `BigInt`: value = mantissa / 10^scale.
//! All operands of a binary operation must carry the same scale; results stay
//! at that scale.  Truncation error per operation is one unit in the last
//! place, which the callers absorb with guard digits.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, Zero};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumError {
    #[error("division by a (numerically) vanishing quantity")]
    NearZeroDivisor,
    #[error("logarithm argument {0} outside the supported range")]
    LnRange(String),
    #[error("non-integer power of a non-positive base {0}")]
    NonPositiveBase(String),
    #[error("series failed to converge")]
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BigFloat {
    m: BigInt,
    scale: u32,
}

fn pow10(e: u32) -> BigInt {
    BigInt::from(10u32).pow(e)
}

impl BigFloat {
    pub fn zero(scale: u32) -> Self {
        BigFloat { m: BigInt::zero(), scale }
    }

    pub fn from_int(n: i64, scale: u32) -> Self {
        BigFloat { m: BigInt::from(n) * pow10(scale), scale }
    }

    pub fn from_rational(r: &BigRational, scale: u32) -> Self {
        BigFloat { m: r.numer() * pow10(scale) / r.denom(), scale }
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        self.m.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.m.is_negative()
    }

    /// |self| < 10^(-k)
    pub fn smaller_than_neg_pow10(&self, k: u32) -> bool {
        if k > self.scale {
            return self.m.is_zero();
        }
        self.m.abs() < pow10(self.scale - k)
    }

    /// |self| >= 10^(-k): usable as a divisor when k is well inside the
    /// guard digits.
    pub fn comfortably_nonzero(&self, k: u32) -> bool {
        !self.smaller_than_neg_pow10(k)
    }

    pub fn add(&self, o: &Self) -> Self {
        debug_assert_eq!(self.scale, o.scale);
        BigFloat { m: &self.m + &o.m, scale: self.scale }
    }

    pub fn sub(&self, o: &Self) -> Self {
        debug_assert_eq!(self.scale, o.scale);
        BigFloat { m: &self.m - &o.m, scale: self.scale }
    }

    pub fn neg(&self) -> Self {
        BigFloat { m: -&self.m, scale: self.scale }
    }

    pub fn mul(&self, o: &Self) -> Self {
        debug_assert_eq!(self.scale, o.scale);
        BigFloat { m: (&self.m * &o.m) / pow10(self.scale), scale: self.scale }
    }

    pub fn div(&self, o: &Self) -> Result<Self, NumError> {
        debug_assert_eq!(self.scale, o.scale);
        // refuse divisors that have lost all significance
        if o.smaller_than_neg_pow10(self.scale / 2) {
            return Err(NumError::NearZeroDivisor);
        }
        Ok(BigFloat { m: (&self.m * pow10(self.scale)) / &o.m, scale: self.scale })
    }

    pub fn powi(&self, n: i64) -> Result<Self, NumError> {
        if n < 0 {
            let inv = BigFloat::from_int(1, self.scale).div(self)?;
            return inv.powi(-n);
        }
        let mut result = BigFloat::from_int(1, self.scale);
        let mut base = self.clone();
        let mut n = n as u64;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        Ok(result)
    }

    /// sqrt of a nonnegative integer at the working scale.
    pub fn sqrt_int(n: u32, scale: u32) -> Self {
        let big = BigInt::from(n) * pow10(2 * scale);
        BigFloat { m: big.sqrt(), scale }
    }

    pub fn exp(&self) -> Result<Self, NumError> {
        let one = BigFloat::from_int(1, self.scale);
        // range-reduce until |x| <= 1/4
        let quarter_limit = pow10(self.scale) / 4;
        let mut x = self.clone();
        let mut halvings = 0u32;
        while x.m.abs() > quarter_limit {
            x = BigFloat { m: &x.m / 2, scale: x.scale };
            halvings += 1;
            if halvings > 64 {
                return Err(NumError::NoConvergence);
            }
        }
        let mut sum = one.clone();
        let mut term = one;
        for i in 1..1000 {
            term = term.mul(&x);
            term = BigFloat { m: &term.m / i, scale: term.scale };
            if term.m.is_zero() {
                let mut out = sum;
                for _ in 0..halvings {
                    out = out.mul(&out);
                }
                return Ok(out);
            }
            sum = sum.add(&term);
        }
        Err(NumError::NoConvergence)
    }

    /// Natural log for arguments in roughly [1/10, 10]; the sampler keeps
    /// every base it feeds us well inside that window.
    pub fn ln(&self) -> Result<Self, NumError> {
        let scale = self.scale;
        let tenth = pow10(scale) / 10;
        let ten = pow10(scale) * 10;
        if self.m <= tenth || self.m >= ten {
            return Err(NumError::LnRange(self.to_decimal(8)));
        }
        let one = BigFloat::from_int(1, scale);
        // ln x = 2 atanh((x-1)/(x+1))
        let y = self.sub(&one).div(&self.add(&one))?;
        let y2 = y.mul(&y);
        let mut sum = y.clone();
        let mut power = y;
        for i in 0..2000u32 {
            power = power.mul(&y2);
            if power.m.is_zero() {
                return Ok(BigFloat { m: sum.m * 2, scale });
            }
            let term = BigFloat { m: &power.m / (2 * i + 3), scale };
            sum = sum.add(&term);
        }
        Err(NumError::NoConvergence)
    }

    pub fn sin(&self) -> Result<Self, NumError> {
        self.sin_cos_series(true)
    }

    pub fn cos(&self) -> Result<Self, NumError> {
        self.sin_cos_series(false)
    }

    fn sin_cos_series(&self, odd: bool) -> Result<Self, NumError> {
        let mut term =
            if odd { self.clone() } else { BigFloat::from_int(1, self.scale) };
        let mut sum = term.clone();
        let x2 = self.mul(self).neg();
        let start: u64 = if odd { 2 } else { 1 };
        let mut k = start;
        for _ in 0..2000 {
            term = term.mul(&x2);
            term = BigFloat { m: &term.m / (k * (k + 1)), scale: term.scale };
            if term.m.is_zero() {
                return Ok(sum);
            }
            sum = sum.add(&term);
            k += 2;
        }
        Err(NumError::NoConvergence)
    }

    /// Decimal rendering with the requested number of fractional digits
    /// (truncated, not rounded).
    pub fn to_decimal(&self, frac_digits: u32) -> String {
        let keep = frac_digits.min(self.scale);
        let m = &self.m / pow10(self.scale - keep);
        let sign = if m.is_negative() { "-" } else { "" };
        let abs = m.abs();
        let int = &abs / pow10(keep);
        let frac = &abs % pow10(keep);
        if keep == 0 {
            return format!("{sign}{int}");
        }
        format!("{sign}{int}.{frac:0>width$}", width = keep as usize)
    }
}

impl fmt::Display for BigFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_decimal(12))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: u32 = 60;

    fn rat(n: i64, d: i64) -> BigFloat {
        BigFloat::from_rational(&BigRational::new(n.into(), d.into()), S)
    }

    #[test]
    fn arithmetic_round_trip() {
        let a = rat(5, 2);
        let b = rat(1, 3);
        let c = a.mul(&b).div(&b).unwrap().sub(&a);
        assert!(c.smaller_than_neg_pow10(S - 5));
    }

    #[test]
    fn sqrt_seven_squares_back() {
        let s7 = BigFloat::sqrt_int(7, S);
        let back = s7.mul(&s7).sub(&BigFloat::from_int(7, S));
        assert!(back.smaller_than_neg_pow10(S - 5));
    }

    #[test]
    fn exp_ln_inverse() {
        let x = rat(5, 2);
        let y = x.ln().unwrap().exp().unwrap();
        assert!(y.sub(&x).smaller_than_neg_pow10(S - 10));
        // exp(ln 2 + ln 3) = 6
        let six = rat(2, 1).ln().unwrap().add(&rat(3, 1).ln().unwrap()).exp().unwrap();
        assert!(six.sub(&rat(6, 1)).smaller_than_neg_pow10(S - 10));
    }

    #[test]
    fn trig_pythagoras() {
        let x = rat(7, 5);
        let s = x.sin().unwrap();
        let c = x.cos().unwrap();
        let r = s.mul(&s).add(&c.mul(&c)).sub(&BigFloat::from_int(1, S));
        assert!(r.smaller_than_neg_pow10(S - 10));
    }

    #[test]
    fn irrational_power_consistency() {
        // (t^sqrt7)^sqrt7 = t^7 for t = 3/2
        let t = rat(3, 2);
        let s7 = BigFloat::sqrt_int(7, S);
        let t_s7 = s7.mul(&t.ln().unwrap()).exp().unwrap();
        let t7a = s7.mul(&t_s7.ln().unwrap()).exp().unwrap();
        let t7b = t.powi(7).unwrap();
        assert!(t7a.sub(&t7b).smaller_than_neg_pow10(S - 15));
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(rat(-7, 4).to_decimal(3), "-1.750");
        assert_eq!(rat(22, 7).to_decimal(6), "3.142857");
    }
}
