//! Exact scalars of the form `a + b*sqrt(d)` with rational `a`, `b`.
//!
//! Coefficients *and* exponents in this crate are [`QdScalar`]s, so powers
//! like `t^(2-sqrt(7))` or `y^(1/2)` stay exact.  A value with `b = 0` is
//! plain rational and carries the sentinel `d = 0`; a session works with a
//! single radical (the model file declares it), and mixing two different
//! radicals in one arithmetic operation is a usage error.

use num::{BigInt, BigRational, One, Signed, Zero};
use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScalarError {
    #[error("cannot mix radicals sqrt({0}) and sqrt({1}) in one value")]
    MixedRadicals(u32, u32),
    #[error("division by zero scalar")]
    DivisionByZero,
    #[error("sqrt({0}) is not supported: {1}")]
    BadRadicand(u32, &'static str),
}

/// `a + b*sqrt(d)` with exact rational components.
///
/// Canonical form: `b == 0` implies `d == 0`.  Equality and ordering agree
/// with the real value the pair denotes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QdScalar {
    a: BigRational,
    b: BigRational,
    d: u32,
}

fn big(i: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(i))
}

fn is_perfect_square(x: &BigInt) -> Option<BigInt> {
    if x.is_negative() {
        return None;
    }
    let r = x.sqrt();
    if &r * &r == *x {
        Some(r)
    } else {
        None
    }
}

/// Exact square root of a non-negative rational, if it is one.
fn rational_sqrt(x: &BigRational) -> Option<BigRational> {
    let n = is_perfect_square(x.numer())?;
    let m = is_perfect_square(x.denom())?;
    Some(BigRational::new(n, m))
}

impl QdScalar {
    pub fn new(a: BigRational, b: BigRational, d: u32) -> Result<Self, ScalarError> {
        if b.is_zero() {
            return Ok(QdScalar { a, b, d: 0 });
        }
        if d < 2 {
            return Err(ScalarError::BadRadicand(d, "must be an integer >= 2"));
        }
        if is_perfect_square(&BigInt::from(d)).is_some() {
            return Err(ScalarError::BadRadicand(d, "perfect square; fold it into the rational part"));
        }
        Ok(QdScalar { a, b, d })
    }

    pub fn rational(a: BigRational) -> Self {
        QdScalar { a, b: BigRational::zero(), d: 0 }
    }

    pub fn from_int(i: i64) -> Self {
        Self::rational(big(i))
    }

    pub fn from_frac(n: i64, m: i64) -> Self {
        assert!(m != 0, "zero denominator");
        Self::rational(BigRational::new(BigInt::from(n), BigInt::from(m)))
    }

    /// The pure radical `sqrt(d)`.
    pub fn sqrt_d(d: u32) -> Result<Self, ScalarError> {
        Self::new(BigRational::zero(), BigRational::one(), d)
    }

    pub fn zero() -> Self {
        Self::from_int(0)
    }

    pub fn one() -> Self {
        Self::from_int(1)
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.b.is_zero() && self.a.is_one()
    }

    pub fn is_rational(&self) -> bool {
        self.b.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.b.is_zero() && self.a.is_integer()
    }

    /// Integer value when the scalar is one, for power-unrolling paths.
    pub fn to_integer(&self) -> Option<BigInt> {
        if self.is_integer() {
            Some(self.a.to_integer())
        } else {
            None
        }
    }

    pub fn parts(&self) -> (&BigRational, &BigRational, u32) {
        (&self.a, &self.b, self.d)
    }

    fn join_d(&self, other: &Self) -> Result<u32, ScalarError> {
        match (self.d, other.d) {
            (0, d) | (d, 0) => Ok(d),
            (d1, d2) if d1 == d2 => Ok(d1),
            (d1, d2) => Err(ScalarError::MixedRadicals(d1, d2)),
        }
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self, ScalarError> {
        let d = self.join_d(other)?;
        QdScalar::new(&self.a + &other.a, &self.b + &other.b, d)
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self, ScalarError> {
        let d = self.join_d(other)?;
        // (a1 + b1 r)(a2 + b2 r) = a1 a2 + b1 b2 d + (a1 b2 + a2 b1) r
        let dd = big(d as i64);
        QdScalar::new(
            &self.a * &other.a + &self.b * &other.b * &dd,
            &self.a * &other.b + &other.a * &self.b,
            d,
        )
    }

    pub fn neg_ref(&self) -> Self {
        QdScalar { a: -&self.a, b: -&self.b, d: self.d }
    }

    /// Multiplicative inverse; zero is a reported error, never a NaN.
    pub fn inv(&self) -> Result<Self, ScalarError> {
        if self.is_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        if self.b.is_zero() {
            return Ok(QdScalar::rational(self.a.recip()));
        }
        // 1/(a + b r) = (a - b r)/(a^2 - b^2 d); the norm is nonzero because
        // sqrt(d) is irrational for the accepted d.
        let norm = &self.a * &self.a - &self.b * &self.b * big(self.d as i64);
        QdScalar::new(&self.a / &norm, -&self.b / &norm, self.d)
    }

    pub fn checked_div(&self, other: &Self) -> Result<Self, ScalarError> {
        self.checked_mul(&other.inv()?)
    }

    /// Sign of the real value: -1, 0 or 1. Exact.
    pub fn sign(&self) -> i8 {
        let sa = sign_of(&self.a);
        let sb = sign_of(&self.b);
        match (sa, sb) {
            (0, 0) => 0,
            (s, 0) | (0, s) => s,
            (s1, s2) if s1 == s2 => s1,
            (s1, _) => {
                // opposite signs: |a| vs |b| sqrt(d)  <=>  a^2 vs b^2 d
                let lhs = &self.a * &self.a;
                let rhs = &self.b * &self.b * big(self.d as i64);
                match lhs.cmp(&rhs) {
                    Ordering::Greater => s1,
                    Ordering::Less => -s1,
                    Ordering::Equal => 0, // unreachable for irrational sqrt(d)
                }
            }
        }
    }

    pub fn is_negative(&self) -> bool {
        self.sign() < 0
    }

    pub fn abs(&self) -> Self {
        if self.is_negative() {
            self.neg_ref()
        } else {
            self.clone()
        }
    }

    /// Integer power with exact inversion for negative exponents.
    pub fn powi(&self, mut e: i64) -> Result<Self, ScalarError> {
        let mut base = if e < 0 {
            e = -e;
            self.inv()?
        } else {
            self.clone()
        };
        let mut acc = QdScalar::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.checked_mul(&base)?;
            }
            base = base.checked_mul(&base)?;
            e >>= 1;
        }
        Ok(acc)
    }

    /// Exact square root when one exists in Q or Q(sqrt(d)), else None.
    ///
    /// `session_d` is the radical the result may use (e.g. sqrt(28) = 2 sqrt(7)
    /// with session_d = 7).
    pub fn try_sqrt(&self, session_d: u32) -> Option<Self> {
        if !self.b.is_zero() || self.a.is_negative() {
            return None;
        }
        if let Some(r) = rational_sqrt(&self.a) {
            return Some(QdScalar::rational(r));
        }
        if session_d >= 2 {
            let quotient = &self.a / big(session_d as i64);
            if let Some(r) = rational_sqrt(&quotient) {
                return QdScalar::new(BigRational::zero(), r, session_d).ok();
            }
        }
        None
    }

    /// gcd of the two rational components, for primitive-part normalization.
    pub fn component_gcd(&self) -> BigRational {
        gcd_rational(&self.a, &self.b)
    }
}

fn sign_of(r: &BigRational) -> i8 {
    if r.is_zero() {
        0
    } else if r.is_negative() {
        -1
    } else {
        1
    }
}

/// gcd on rationals: gcd of numerators / lcm of denominators (non-negative).
pub fn gcd_rational(x: &BigRational, y: &BigRational) -> BigRational {
    use num::Integer;
    if x.is_zero() {
        return y.abs();
    }
    if y.is_zero() {
        return x.abs();
    }
    let n = x.numer().gcd(y.numer());
    let m = x.denom().lcm(y.denom());
    BigRational::new(n, m)
}

impl PartialOrd for QdScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QdScalar {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.d == other.d || self.d == 0 || other.d == 0 {
            let diff = QdScalar {
                a: &self.a - &other.a,
                b: &self.b - &other.b,
                d: self.d.max(other.d),
            };
            match diff.sign() {
                -1 => Ordering::Less,
                0 => Ordering::Equal,
                _ => Ordering::Greater,
            }
        } else {
            // Incomparable radicals never meet in one session; fall back to a
            // total structural order so collections stay usable.
            (&self.a, &self.b, self.d).cmp(&(&other.a, &other.b, other.d))
        }
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl std::ops::$trait for QdScalar {
            type Output = QdScalar;
            fn $method(self, rhs: QdScalar) -> QdScalar {
                self.$checked(&rhs).expect("scalar operation failed")
            }
        }
        impl std::ops::$trait<&QdScalar> for &QdScalar {
            type Output = QdScalar;
            fn $method(self, rhs: &QdScalar) -> QdScalar {
                self.$checked(rhs).expect("scalar operation failed")
            }
        }
    };
}

forward_binop!(Add, add, checked_add);
forward_binop!(Mul, mul, checked_mul);

impl std::ops::Sub for QdScalar {
    type Output = QdScalar;
    fn sub(self, rhs: QdScalar) -> QdScalar {
        &self - &rhs
    }
}

impl std::ops::Sub<&QdScalar> for &QdScalar {
    type Output = QdScalar;
    fn sub(self, rhs: &QdScalar) -> QdScalar {
        self.checked_add(&rhs.neg_ref()).expect("scalar operation failed")
    }
}

impl std::ops::Neg for QdScalar {
    type Output = QdScalar;
    fn neg(self) -> QdScalar {
        self.neg_ref()
    }
}

impl fmt::Display for QdScalar {
    /// Canonical, re-parseable text: `3`, `-3/2`, `sqrt(7)`, `2*sqrt(7)`,
    /// `2+sqrt(7)`, `2-3*sqrt(7)`.  Callers add parentheses where precedence
    /// demands them.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.b.is_zero() {
            return write!(f, "{}", self.a);
        }
        let write_radical = |f: &mut fmt::Formatter<'_>, b: &BigRational| -> fmt::Result {
            if b.is_one() {
                write!(f, "sqrt({})", self.d)
            } else if (-b).is_one() {
                write!(f, "-sqrt({})", self.d)
            } else {
                write!(f, "{}*sqrt({})", b, self.d)
            }
        };
        if self.a.is_zero() {
            return write_radical(f, &self.b);
        }
        write!(f, "{}", self.a)?;
        if self.b.is_negative() {
            write!(f, "-")?;
            write_radical(f, &self.b.abs())
        } else {
            write!(f, "+")?;
            write_radical(f, &self.b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sqrt7() -> QdScalar {
        QdScalar::sqrt_d(7).unwrap()
    }

    #[test]
    fn conjugate_product_is_norm() {
        // (2 + sqrt 7)(-2 + sqrt 7) = 7 - 4 = 3
        let p = QdScalar::from_int(2) + sqrt7();
        let q = QdScalar::from_int(-2) + sqrt7();
        assert_eq!(p * q, QdScalar::from_int(3));
    }

    #[test]
    fn inverse_of_radical_value() {
        let x = QdScalar::from_int(1) + sqrt7();
        let inv = x.inv().unwrap();
        assert_eq!(x * inv, QdScalar::one());
    }

    #[test]
    fn division_by_zero_is_reported() {
        assert_eq!(QdScalar::one().checked_div(&QdScalar::zero()), Err(ScalarError::DivisionByZero));
    }

    #[test]
    fn mixed_radicals_rejected() {
        let x = QdScalar::sqrt_d(7).unwrap();
        let y = QdScalar::sqrt_d(5).unwrap();
        assert!(matches!(x.checked_add(&y), Err(ScalarError::MixedRadicals(7, 5))));
    }

    #[test]
    fn perfect_square_radicand_rejected() {
        assert!(QdScalar::sqrt_d(9).is_err());
        assert!(QdScalar::sqrt_d(1).is_err());
    }

    #[test]
    fn sign_mixed_components() {
        // 3 - sqrt(7) > 0 since 9 > 7; 2 - sqrt(7) < 0 since 4 < 7.
        assert_eq!((QdScalar::from_int(3) - sqrt7()).sign(), 1);
        assert_eq!((QdScalar::from_int(2) - sqrt7()).sign(), -1);
        assert_eq!((sqrt7() - QdScalar::from_int(3)).sign(), -1);
        assert_eq!(QdScalar::zero().sign(), 0);
    }

    #[test]
    fn ordering_matches_value() {
        let vals = [
            QdScalar::from_int(-3),
            QdScalar::from_int(0) - sqrt7(),
            QdScalar::from_frac(-1, 2),
            QdScalar::zero(),
            QdScalar::from_frac(5, 2),
            sqrt7(),
            QdScalar::from_int(3),
        ];
        for w in vals.windows(2) {
            assert!(w[0] < w[1], "{} < {}", w[0], w[1]);
        }
    }

    #[test]
    fn sqrt_extraction() {
        assert_eq!(QdScalar::from_frac(9, 4).try_sqrt(7), Some(QdScalar::from_frac(3, 2)));
        // sqrt(28) = 2 sqrt(7)
        let two_sqrt7 = QdScalar::from_int(2) * sqrt7();
        assert_eq!(QdScalar::from_int(28).try_sqrt(7), Some(two_sqrt7));
        assert_eq!(QdScalar::from_int(5).try_sqrt(7), None);
        assert_eq!(QdScalar::from_int(-4).try_sqrt(7), None);
    }

    #[test]
    fn display_round_shapes() {
        assert_eq!(QdScalar::from_frac(-3, 2).to_string(), "-3/2");
        assert_eq!(sqrt7().to_string(), "sqrt(7)");
        assert_eq!((QdScalar::zero() - sqrt7()).to_string(), "-sqrt(7)");
        let mixed = QdScalar::from_int(2) - QdScalar::from_int(3) * sqrt7();
        assert_eq!(mixed.to_string(), "2-3*sqrt(7)");
    }

    fn arb_qd() -> impl Strategy<Value = QdScalar> {
        (-20i64..20, 1i64..8, -20i64..20, 1i64..8).prop_map(|(an, ad, bn, bd)| {
            QdScalar::new(
                BigRational::new(BigInt::from(an), BigInt::from(ad)),
                BigRational::new(BigInt::from(bn), BigInt::from(bd)),
                7,
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn field_axioms(x in arb_qd(), y in arb_qd(), z in arb_qd()) {
            prop_assert_eq!(&x + &y, &y + &x);
            prop_assert_eq!(&x * &y, &y * &x);
            let lhs = x.checked_mul(&y.checked_add(&z).unwrap()).unwrap();
            let rhs = x.checked_mul(&y).unwrap().checked_add(&x.checked_mul(&z).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
            if !x.is_zero() {
                prop_assert_eq!(x.checked_mul(&x.inv().unwrap()).unwrap(), QdScalar::one());
            }
        }

        #[test]
        fn powers_compose(x in arb_qd()) {
            prop_assume!(!x.is_zero());
            let p = x.powi(3).unwrap();
            let q = x.powi(-2).unwrap();
            prop_assert_eq!(p.checked_mul(&q).unwrap(), x);
        }
    }
}
