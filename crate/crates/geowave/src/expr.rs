//! Exact symbolic expressions over a jet space.
//!
//! The canonical form is a ratio of multivariate "polynomials" whose terms
//! are products `coeff * atom1^e1 * atom2^e2 * ...` with [`QdScalar`]
//! coefficients *and* exponents (so `t^(2-sqrt(7))` and `y^(1/2)` are single
//! terms).  Trigonometric atoms obey a per-term normal form — a `sin`
//! exponent is always exactly 1 and a `cos` exponent a positive integer —
//! with `sin^2 -> 1 - cos^2` applied during multiplication.  Under that
//! normal form the term ring is an integral domain, so an expression equals
//! zero iff its numerator has no terms, which is what makes every downstream
//! check (symmetry conditions, divergences, Euler operators) exact.

use crate::scalar::{gcd_rational, QdScalar};
use num::{BigRational, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("division by zero expression")]
    DivisionByZero,
    #[error("power {exponent} of `{base}` is not representable exactly")]
    BadPower { base: String, exponent: String },
    #[error("substituting into `{atom}^{exponent}` needs an integer exponent")]
    NonIntegerSubstitution { atom: String, exponent: String },
    #[error("scalar arithmetic failed: {0}")]
    Scalar(#[from] crate::scalar::ScalarError),
}

/// An indivisible symbol: the alphabet the term ring is built from.
///
/// `Jet` is a partial derivative of the dependent field, identified by the
/// multiset of differentiation variables (a sorted list, duplicates allowed;
/// empty means the field itself).  `Ufunc` is an opaque function of
/// expression arguments, with `derivs` the sorted multiset of argument slots
/// it has been differentiated against.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    Coord(String),
    Param(String),
    Sin(String),
    Cos(String),
    Jet { field: String, derivs: Vec<String> },
    Ufunc { name: String, args: Vec<Expr>, derivs: Vec<usize> },
}

impl Atom {
    pub fn coord(name: impl Into<String>) -> Self {
        Atom::Coord(name.into())
    }

    pub fn param(name: impl Into<String>) -> Self {
        Atom::Param(name.into())
    }

    pub fn jet(field: impl Into<String>, derivs: &[&str]) -> Self {
        let mut d: Vec<String> = derivs.iter().map(|s| s.to_string()).collect();
        d.sort();
        Atom::Jet { field: field.into(), derivs: d }
    }

    pub fn jet_owned(field: String, mut derivs: Vec<String>) -> Self {
        derivs.sort();
        Atom::Jet { field, derivs }
    }

    pub fn ufunc(name: impl Into<String>, args: Vec<Expr>, mut derivs: Vec<usize>) -> Self {
        derivs.sort_unstable();
        Atom::Ufunc { name: name.into(), args, derivs }
    }

    /// Number of differentiations if this is a jet atom.
    pub fn jet_order(&self) -> Option<usize> {
        match self {
            Atom::Jet { derivs, .. } => Some(derivs.len()),
            _ => None,
        }
    }

    pub fn is_trig(&self) -> bool {
        matches!(self, Atom::Sin(_) | Atom::Cos(_))
    }
}

/// A product of atoms raised to exact exponents (no explicit coefficient).
/// Exponents are nonzero; `sin` atoms carry exponent 1 and `cos` atoms a
/// positive integer exponent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Monomial(BTreeMap<Atom, QdScalar>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(BTreeMap::new())
    }

    pub fn atom(a: Atom) -> Self {
        let mut m = BTreeMap::new();
        m.insert(a, QdScalar::one());
        Monomial(m)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    /// Single atom raised to an arbitrary exponent.  Callers that might
    /// violate the trig normal form must route the result through
    /// `Poly::mul`, which restores it.
    pub fn pow_atom(a: Atom, e: QdScalar) -> Self {
        let mut m = Monomial(BTreeMap::new());
        m.insert_raw(a, e);
        m
    }

    pub fn exponent(&self, a: &Atom) -> Option<&QdScalar> {
        self.0.get(a)
    }

    /// Extend with one atom-power pair; intended for re-partitioning atoms
    /// of an already-normalized monomial.
    pub fn merged(mut self, a: Atom, e: QdScalar) -> Monomial {
        self.insert_raw(a, e);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Atom, &QdScalar)> {
        self.0.iter()
    }

    pub fn contains(&self, a: &Atom) -> bool {
        self.0.contains_key(a)
    }

    fn insert_raw(&mut self, a: Atom, e: QdScalar) {
        if !e.is_zero() {
            self.0.insert(a, e);
        }
    }

    /// Per-atom reciprocal; valid for Laurent atoms, and for trig atoms only
    /// transiently (callers route the result through `Poly::mul`, which
    /// restores the trig normal form).
    fn inverse(&self) -> Monomial {
        Monomial(self.0.iter().map(|(a, e)| (a.clone(), e.neg_ref())).collect())
    }

    /// True when the trig normal form holds for every atom.
    fn trig_ok(&self) -> bool {
        self.0.iter().all(|(a, e)| match a {
            Atom::Sin(_) => e.is_one(),
            Atom::Cos(_) => e.to_integer().map_or(false, |k| k > 0.into()),
            _ => true,
        })
    }

    /// Sum of all exponents; the grading used to pick division pivots.
    fn total_degree(&self) -> QdScalar {
        let mut d = QdScalar::zero();
        for (_, e) in &self.0 {
            d = d.checked_add(e).expect("exponent arithmetic");
        }
        d
    }

    /// Comparison compatible with monomial multiplication: total degree
    /// first, then exponents atom-by-atom over the union of atoms (absent =
    /// zero).  The derived `Ord` skips absent atoms and is *not*
    /// multiplicative, which matters for division pivots: with a
    /// non-multiplicative order the leading term of a product is not the
    /// product of leading terms, and long division can fail to advance.
    fn cmp_graded(&self, other: &Monomial) -> std::cmp::Ordering {
        match self.total_degree().cmp(&other.total_degree()) {
            std::cmp::Ordering::Equal => self.cmp_exponents(other),
            ord => ord,
        }
    }

    /// Exponent-by-exponent comparison over the union of atoms (absent =
    /// zero), as a merge walk so no union set is materialized.  Exponents are
    /// stored nonzero, so an atom present on one side only decides
    /// immediately.
    fn cmp_exponents(&self, other: &Monomial) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        let zero = QdScalar::zero();
        let mut ia = self.0.iter();
        let mut ib = other.0.iter();
        let (mut na, mut nb) = (ia.next(), ib.next());
        loop {
            match (na, nb) {
                (None, None) => return Ordering::Equal,
                (Some((_, ea)), None) => return ea.cmp(&zero),
                (None, Some((_, eb))) => return zero.cmp(eb),
                (Some((aa, ea)), Some((ab, eb))) => match aa.cmp(ab) {
                    Ordering::Less => return ea.cmp(&zero),
                    Ordering::Greater => return zero.cmp(eb),
                    Ordering::Equal => match ea.cmp(eb) {
                        Ordering::Equal => {
                            na = ia.next();
                            nb = ib.next();
                        }
                        ord => return ord,
                    },
                },
            }
        }
    }

    /// `self / d` as a monomial, or `None` when the exponent difference
    /// leaves the trig normal form (negative cosine powers, sine powers
    /// other than zero or one).
    fn quotient_by(&self, d: &Monomial) -> Option<Monomial> {
        let mut out = self.0.clone();
        for (a, e) in &d.0 {
            let cur = out.remove(a).unwrap_or_else(QdScalar::zero);
            let next = cur.checked_add(&e.neg_ref()).expect("exponent arithmetic");
            if !next.is_zero() {
                out.insert(a.clone(), next);
            }
        }
        let q = Monomial(out);
        if q.trig_ok() { Some(q) } else { None }
    }
}

/// A finite sum of `coeff * monomial` terms with exact coefficients.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Poly {
    terms: BTreeMap<Monomial, QdScalar>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn one() -> Self {
        Poly::from_term(Monomial::one(), QdScalar::one())
    }

    pub fn scalar(c: QdScalar) -> Self {
        Poly::from_term(Monomial::one(), c)
    }

    pub fn from_term(m: Monomial, c: QdScalar) -> Self {
        let mut p = Poly::zero();
        p.add_term(m, c);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self == &Poly::one()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &QdScalar)> {
        self.terms.iter()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// The structurally largest term; stable tie-break for normalizations.
    pub fn leading(&self) -> Option<(&Monomial, &QdScalar)> {
        self.terms.iter().next_back()
    }

    fn add_term(&mut self, m: Monomial, c: QdScalar) {
        if c.is_zero() {
            return;
        }
        debug_assert!(m.trig_ok(), "trig normal form violated: {m:?}");
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().checked_add(&c).expect("coefficient arithmetic");
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg_ref())).collect() }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &QdScalar) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self
                .terms
                .iter()
                .map(|(m, k)| (m.clone(), k.checked_mul(c).expect("coefficient arithmetic")))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let c = ca.checked_mul(cb).expect("coefficient arithmetic");
                for (m, k) in mul_monomials(ma, mb).terms {
                    out.add_term(m, k.checked_mul(&c).expect("coefficient arithmetic"));
                }
            }
        }
        out
    }

    /// Multiply by a single monomial (exponents may be negative: Laurent
    /// shift).  Goes through `mul` so the trig normal form is restored.
    fn mul_monomial(&self, m: &Monomial) -> Poly {
        self.mul(&Poly::from_term(m.clone(), QdScalar::one()))
    }

    /// Largest monomial dividing every term, trig atoms excluded (they stay
    /// in place so the per-term sin/cos normal form is never broken by a
    /// Laurent shift).  Negative "minimum" exponents are included, which is
    /// what clears `t^(-2)`-style terms.
    pub fn monomial_content(&self) -> Monomial {
        let mut content: Option<BTreeMap<Atom, QdScalar>> = None;
        for (m, _) in &self.terms {
            let mut cur: BTreeMap<Atom, QdScalar> = m
                .0
                .iter()
                .filter(|(a, _)| !a.is_trig())
                .map(|(a, e)| (a.clone(), e.clone()))
                .collect();
            match &mut content {
                None => content = Some(cur),
                Some(acc) => {
                    let zero = QdScalar::zero();
                    let keys: Vec<Atom> = acc.keys().chain(cur.keys()).cloned().collect();
                    let mut next = BTreeMap::new();
                    for k in keys {
                        let ea = acc.get(&k).unwrap_or(&zero);
                        let eb = cur.get(&k).unwrap_or(&zero);
                        let min = if ea <= eb { ea.clone() } else { eb.clone() };
                        if !min.is_zero() {
                            next.insert(k, min);
                        }
                    }
                    *acc = next;
                    cur.clear();
                }
            }
        }
        Monomial(content.unwrap_or_default())
    }

    /// gcd of all coefficients (a positive rational), with the sign of the
    /// leading coefficient folded in so the primitive part leads positively.
    pub fn scalar_content(&self) -> QdScalar {
        let mut g = BigRational::from_integer(0.into());
        for (_, c) in &self.terms {
            g = gcd_rational(&g, &c.component_gcd());
        }
        if g == BigRational::from_integer(0.into()) {
            return QdScalar::one();
        }
        let mut content = QdScalar::rational(g);
        if let Some((_, lead)) = self.leading() {
            if lead.sign() < 0 {
                content = content.neg_ref();
            }
        }
        content
    }

    /// Divide out both the monomial content and the scalar content: the
    /// canonical "cleared" form of an equation's numerator.
    pub fn primitive_part(&self) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let m = self.monomial_content();
        let shifted = self.mul_monomial(&m.inverse());
        let c = shifted.scalar_content().inv().expect("nonzero content");
        shifted.scale(&c)
    }

    /// Like `primitive_part`, but only coordinate and parameter content is
    /// divided out.  Jets and opaque functions always stay: removing a
    /// common jet factor from an equation would change its solution set.
    pub fn equation_primitive_part(&self) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let mut keep = Monomial::one();
        for (a, e) in self.monomial_content().iter() {
            if matches!(a, Atom::Coord(_) | Atom::Param(_)) {
                keep = keep.merged(a.clone(), e.clone());
            }
        }
        let shifted = self.mul_monomial(&keep.inverse());
        let c = shifted.scalar_content().inv().expect("nonzero content");
        shifted.scale(&c)
    }

    /// Divide every term by `m`, or `None` when some quotient would leave
    /// the trig normal form.
    fn div_monomial(&self, m: &Monomial) -> Option<Poly> {
        if m.is_one() {
            return Some(self.clone());
        }
        let mut out = Poly::zero();
        for (mono, c) in &self.terms {
            out.add_term(mono.quotient_by(m)?, c.clone());
        }
        Some(out)
    }

    /// Exact polynomial quotient `self / d`, if one exists in the term ring.
    ///
    /// Multivariate long division, pivoting on the term of highest total
    /// degree.  Laurent exponents make the term order non-well-founded, so a
    /// step budget bounds the loop; running out is reported as "no quotient",
    /// which is the safe answer for the opportunistic callers.  A `Some`
    /// result is always genuine: the remainder reached exactly zero.
    pub fn try_div_exact(&self, d: &Poly) -> Option<Poly> {
        if d.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Poly::zero());
        }
        let (dm, dc) = d.pivot(false)?;
        let dc_inv = dc.inv().ok()?;
        // For an exact quotient q, leading and trailing terms multiply out
        // (the term ring is a domain and the graded order respects
        // products), so every monomial of q has total degree at least
        // deg min(self) - deg min(d) and at most deg max(self) - deg max(d).
        // An empty window rejects immediately; crossing the lower line
        // proves inexactness long before the step budget runs out.
        let trail_deg = self.pivot(true)?.0.total_degree();
        let low = {
            let (dm_min, _) = d.pivot(true)?;
            trail_deg.checked_add(&dm_min.total_degree().neg_ref()).ok()?
        };
        let high = {
            let (sm, _) = self.pivot(false)?;
            sm.total_degree().checked_add(&dm.total_degree().neg_ref()).ok()?
        };
        if high < low {
            return None;
        }
        // The remainder lives in a map keyed by the graded order, so the
        // pivot is the last entry and each step subtracts in place instead
        // of rebuilding the whole polynomial.
        let mut rem: BTreeMap<DivKey, QdScalar> = BTreeMap::new();
        for (m, c) in &self.terms {
            rem.insert(DivKey::new(m.clone()), c.clone());
        }
        let mut quot: Vec<(Monomial, QdScalar)> = Vec::new();
        let mut budget = 16 * self.term_count() + 64 * d.term_count() + 256;
        let rem_cap = 4 * (self.term_count() + d.term_count()) + 64;
        while let Some((key, rc)) = rem.iter().next_back().map(|(k, c)| (k.clone(), c.clone())) {
            if budget == 0 || rem.len() > rem_cap {
                return None;
            }
            budget -= 1;
            // In an exact division the remainder is d * (unprocessed part of
            // the quotient), whose trailing term is at least the dividend's
            // trailing term; debris below that line proves inexactness.
            if let Some((min_key, _)) = rem.iter().next() {
                if min_key.deg < trail_deg {
                    return None;
                }
            }
            let qm = key.mono.quotient_by(&dm)?;
            if qm.total_degree() < low {
                return None;
            }
            let qc = rc.checked_mul(&dc_inv).ok()?;
            let prod = d.mul(&Poly::from_term(qm.clone(), qc.clone()));
            for (m, c) in prod.terms() {
                match rem.entry(DivKey::new(m.clone())) {
                    std::collections::btree_map::Entry::Vacant(v) => {
                        v.insert(c.neg_ref());
                    }
                    std::collections::btree_map::Entry::Occupied(mut o) => {
                        let next = o.get().checked_add(&c.neg_ref()).ok()?;
                        if next.is_zero() {
                            o.remove();
                        } else {
                            *o.get_mut() = next;
                        }
                    }
                }
            }
            quot.push((qm, qc));
        }
        let mut out = Poly::zero();
        for (m, c) in quot {
            out.add_term(m, c);
        }
        Some(out)
    }

    /// The extremal term in the multiplication-compatible graded order
    /// (maximal, or minimal with `min`), cloned out so the polynomial can
    /// keep mutating.
    fn pivot(&self, min: bool) -> Option<(Monomial, QdScalar)> {
        let want = if min { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater };
        let mut best: Option<(&Monomial, &QdScalar)> = None;
        for (m, c) in &self.terms {
            let better = match &best {
                None => true,
                Some((bm, _)) => m.cmp_graded(bm) == want,
            };
            if better {
                best = Some((m, c));
            }
        }
        best.map(|(m, c)| (m.clone(), c.clone()))
    }

    /// All atoms appearing anywhere (including inside ufunc arguments).
    pub fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        for (m, _) in &self.terms {
            for (a, _) in m.iter() {
                out.insert(a.clone());
                if let Atom::Ufunc { args, .. } = a {
                    for arg in args {
                        arg.num.collect_atoms(out);
                        arg.den.collect_atoms(out);
                    }
                }
            }
        }
    }
}

/// Per-atom minimum exponent over a family of monomials (absent = zero):
/// the largest monomial dividing each one.  Unlike `monomial_content`, trig
/// atoms participate — minima there are never negative, so dividing them
/// out preserves the trig normal form.
fn min_content<'a>(monos: impl Iterator<Item = &'a Monomial>) -> Monomial {
    let zero = QdScalar::zero();
    let mut acc: Option<BTreeMap<Atom, QdScalar>> = None;
    for m in monos {
        match &mut acc {
            None => acc = Some(m.0.clone()),
            Some(a) => {
                let keys: Vec<Atom> = a.keys().chain(m.0.keys()).cloned().collect();
                let mut next = BTreeMap::new();
                for k in keys {
                    let ea = a.get(&k).unwrap_or(&zero);
                    let eb = m.0.get(&k).unwrap_or(&zero);
                    let min = if ea <= eb { ea.clone() } else { eb.clone() };
                    if !min.is_zero() {
                        next.insert(k, min);
                    }
                }
                *a = next;
            }
        }
    }
    Monomial(acc.unwrap_or_default())
}

/// A monomial with its total degree cached, ordered by the graded
/// (multiplication-compatible) order.  Keys the division remainder so the
/// pivot is always the map's last entry.
#[derive(Clone, PartialEq, Eq)]
struct DivKey {
    deg: QdScalar,
    mono: Monomial,
}

impl DivKey {
    fn new(mono: Monomial) -> DivKey {
        DivKey { deg: mono.total_degree(), mono }
    }
}

impl Ord for DivKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.deg
            .cmp(&other.deg)
            .then_with(|| self.mono.cmp_exponents(&other.mono))
    }
}

impl PartialOrd for DivKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Product of two monomials as a polynomial: exponents add, then any
/// `sin^k` with `k >= 2` is expanded through `sin^2 = 1 - cos^2`.
fn mul_monomials(a: &Monomial, b: &Monomial) -> Poly {
    let mut exps = a.0.clone();
    for (atom, e) in &b.0 {
        match exps.entry(atom.clone()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(e.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().checked_add(e).expect("exponent arithmetic");
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }
    let mut multiplier = Poly::one();
    let mut plain = Monomial::one();
    for (atom, e) in exps {
        if let Atom::Sin(ang) = &atom {
            let mut k = e.to_integer().expect("sin exponent must be a positive integer");
            assert!(k > 0.into(), "sin exponent must be positive in a term");
            // sin^2 = 1 - cos^2, applied floor(k/2) times
            while k >= 2.into() {
                let mut one_minus_cos2 = Poly::one();
                let cos2 = {
                    let mut m = Monomial::one();
                    m.insert_raw(Atom::Cos(ang.clone()), QdScalar::from_int(2));
                    m
                };
                one_minus_cos2 = one_minus_cos2.sub(&Poly::from_term(cos2, QdScalar::one()));
                multiplier = multiplier.mul(&one_minus_cos2);
                k -= 2;
            }
            if k == 1.into() {
                plain.insert_raw(atom, QdScalar::one());
            }
        } else {
            plain.insert_raw(atom, e);
        }
    }
    let base = Poly::from_term(plain, QdScalar::one());
    if multiplier == Poly::one() {
        base
    } else {
        base.mul(&multiplier)
    }
}

/// A normalized ratio of two term polynomials.  The denominator is nonzero,
/// carries no non-trig monomial content (that is shifted into the numerator
/// as Laurent exponents), is scalar-primitive and leads with a positive
/// coefficient.  `num.is_zero()` is an exact zero test for the value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Expr {
    num: Poly,
    den: Poly,
}

impl Expr {
    fn make(num: Poly, den: Poly) -> Expr {
        debug_assert!(!den.is_zero(), "zero denominator escaped a checked path");
        if num.is_zero() {
            return Expr { num: Poly::zero(), den: Poly::one() };
        }
        // Single-term denominators fold entirely into the numerator.
        if den.term_count() == 1 {
            let (m, c) = den.leading().expect("nonempty");
            let inv_c = c.inv().expect("nonzero leading coefficient");
            let has_trig = m.iter().any(|(a, _)| a.is_trig());
            if !has_trig {
                let shifted = num.mul_monomial(&m.inverse()).scale(&inv_c);
                return Expr { num: shifted, den: Poly::one() };
            }
        }
        let content = den.monomial_content();
        let (num, den) = if content.is_one() {
            (num, den)
        } else {
            (num.mul_monomial(&content.inverse()), den.mul_monomial(&content.inverse()))
        };
        let c = den.scalar_content();
        let inv_c = c.inv().expect("nonzero content");
        Expr { num: num.scale(&inv_c), den: den.scale(&inv_c) }
    }

    pub fn zero() -> Expr {
        Expr { num: Poly::zero(), den: Poly::one() }
    }

    pub fn one() -> Expr {
        Expr::from_int(1)
    }

    pub fn from_int(i: i64) -> Expr {
        Expr::scalar(QdScalar::from_int(i))
    }

    pub fn from_frac_parts(n: i64, m: i64) -> Expr {
        Expr::scalar(QdScalar::from_frac(n, m))
    }

    pub fn scalar(c: QdScalar) -> Expr {
        Expr { num: Poly::scalar(c), den: Poly::one() }
    }

    pub fn atom(a: Atom) -> Expr {
        Expr { num: Poly::from_term(Monomial::atom(a), QdScalar::one()), den: Poly::one() }
    }

    pub fn coord(name: &str) -> Expr {
        Expr::atom(Atom::coord(name))
    }

    pub fn param(name: &str) -> Expr {
        Expr::atom(Atom::param(name))
    }

    pub fn sin(angular: &str) -> Expr {
        Expr::atom(Atom::Sin(angular.to_string()))
    }

    pub fn cos(angular: &str) -> Expr {
        Expr::atom(Atom::Cos(angular.to_string()))
    }

    pub fn jet(field: &str, derivs: &[&str]) -> Expr {
        Expr::atom(Atom::jet(field, derivs))
    }

    pub fn from_poly(p: Poly) -> Expr {
        Expr::make(p, Poly::one())
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self == &Expr::one()
    }

    /// Exact semantic equality via cross-multiplication in the term domain.
    pub fn equals(&self, other: &Expr) -> bool {
        if self.den == other.den {
            return self.num == other.num;
        }
        self.num.mul(&other.den) == other.num.mul(&self.den)
    }

    pub fn add(&self, other: &Expr) -> Expr {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        if self.den == other.den {
            return Expr::make(self.num.add(&other.num), self.den.clone());
        }
        Expr::make(
            self.num.mul(&other.den).add(&other.num.mul(&self.den)),
            self.den.mul(&other.den),
        )
    }

    pub fn neg(&self) -> Expr {
        Expr { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        if self.is_zero() || other.is_zero() {
            return Expr::zero();
        }
        Expr::make(self.num.mul(&other.num), self.den.mul(&other.den))
    }

    pub fn scale(&self, c: &QdScalar) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        Expr { num: self.num.scale(c), den: self.den.clone() }
    }

    pub fn div(&self, other: &Expr) -> Result<Expr, ExprError> {
        if other.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        Ok(Expr::make(self.num.mul(&other.den), self.den.mul(&other.num)))
    }

    pub fn inv(&self) -> Result<Expr, ExprError> {
        Expr::one().div(self)
    }

    /// Strip polynomial factors common to numerator and denominator.
    ///
    /// Plain rational arithmetic here never cancels (there is no general
    /// gcd in this term ring), so chained quotients accumulate dead weight.
    /// Callers that know the likely factors — the geometry layer, mostly —
    /// pass them in and this removes every copy it can prove divides both
    /// sides exactly.  A full numerator/denominator cancellation is tried
    /// first, which catches ratios that are secretly polynomial.
    pub fn cancel(&self, factors: &[Poly]) -> Expr {
        if self.num.is_zero() || self.den.is_one() {
            return self.clone();
        }
        let mut num = self.num.clone();
        let mut den = self.den.clone();
        // One pass suffices: the term ring is a domain, so a candidate that
        // fails to divide the numerator (or denominator) can never divide a
        // later quotient of it either.  The denominator is divided first so
        // candidates that are not common factors fail on the smaller side.
        for f in factors {
            if f.term_count() < 2 {
                continue;
            }
            while den.term_count() > 1 {
                let Some(qd) = den.try_div_exact(f) else { break };
                let Some(qn) = num.try_div_exact(f) else { break };
                num = qn;
                den = qd;
            }
        }
        // The ratio may be secretly polynomial; try the whole (now reduced)
        // denominator last.
        if den.term_count() > 1 {
            if let Some(q) = num.try_div_exact(&den) {
                return Expr::make(q, Poly::one());
            }
        }
        Expr::make(num, den)
    }

    /// Collapse the ratio when one side exactly divides the other; used to
    /// present quotients (for example comparison units) in lowest terms.
    ///
    /// Monomial content shared by numerator and denominator is cancelled
    /// first.  Besides being a reduction in its own right, that unblocks the
    /// polynomial division: division stalls when divisor and quotient both
    /// carry a sine, because `sin^2` rewrites to `1 - cos^2` and leading
    /// terms stop multiplying term-to-term.
    pub fn reduced(&self) -> Expr {
        if self.num.is_zero() || self.den.is_one() {
            return self.clone();
        }
        let content = min_content(
            self.num.terms().map(|(m, _)| m).chain(self.den.terms().map(|(m, _)| m)),
        );
        let (num, den) = match (self.num.div_monomial(&content), self.den.div_monomial(&content))
        {
            (Some(n), Some(d)) => (n, d),
            _ => (self.num.clone(), self.den.clone()),
        };
        if let Some(q) = num.try_div_exact(&den) {
            return Expr::from_poly(q);
        }
        if let Some(q) = den.try_div_exact(&num) {
            return Expr::make(Poly::one(), q);
        }
        Expr::make(num, den)
    }

    pub fn powi(&self, e: i64) -> Result<Expr, ExprError> {
        if e == 0 {
            return Ok(Expr::one());
        }
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut acc = Expr::one();
        for _ in 0..e.unsigned_abs() {
            acc = acc.mul(&base);
        }
        Ok(acc)
    }

    /// Raise to an exact scalar power.  Integer exponents work on any
    /// expression; fractional or radical exponents require the base to be a
    /// single term whose coefficient the power can act on exactly.
    pub fn pow(&self, e: &QdScalar) -> Result<Expr, ExprError> {
        if let Some(k) = e.to_integer() {
            use num::ToPrimitive;
            let k = k.to_i64().ok_or_else(|| ExprError::BadPower {
                base: self.to_string(),
                exponent: e.to_string(),
            })?;
            return self.powi(k);
        }
        if self.is_zero() {
            return if e.sign() > 0 {
                Ok(Expr::zero())
            } else {
                Err(ExprError::DivisionByZero)
            };
        }
        let bad = || ExprError::BadPower { base: self.to_string(), exponent: e.to_string() };
        if self.num.term_count() != 1 || self.den.term_count() != 1 {
            return Err(bad());
        }
        let (mn, cn) = self.num.leading().expect("nonempty");
        let (md, cd) = self.den.leading().expect("nonempty");
        let coeff = cn.checked_div(cd)?;
        let mut out = Monomial::one();
        for (a, k) in mn.iter() {
            if a.is_trig() {
                return Err(bad());
            }
            out.insert_raw(a.clone(), k.checked_mul(e)?);
        }
        for (a, k) in md.iter() {
            if a.is_trig() {
                return Err(bad());
            }
            out.insert_raw(a.clone(), k.neg_ref().checked_mul(e)?);
        }
        let new_coeff = scalar_pow(&coeff, e).ok_or_else(bad)?;
        Ok(Expr::from_poly(Poly::from_term(out, new_coeff)))
    }

    /// Replace every occurrence of `target` (as a whole atom) by `repl`.
    /// Exponents of the target must be integers unless `repl` is itself a
    /// single-term expression that supports exact fractional powers.
    pub fn subst_atom(&self, target: &Atom, repl: &Expr) -> Result<Expr, ExprError> {
        let num = subst_in_poly(&self.num, target, repl)?;
        let den = subst_in_poly(&self.den, target, repl)?;
        num.div(&den)
    }

    /// Rename atoms wholesale (chart moves); `f` must be injective on the
    /// atoms present or terms may merge.
    pub fn map_atoms(&self, f: &impl Fn(&Atom) -> Atom) -> Expr {
        let map_poly = |p: &Poly| -> Poly {
            let mut out = Poly::zero();
            for (m, c) in p.terms() {
                let mut nm = Monomial::one();
                for (a, e) in m.iter() {
                    let na = match a {
                        Atom::Ufunc { name, args, derivs } => {
                            let mapped = Atom::Ufunc {
                                name: name.clone(),
                                args: args.iter().map(|x| x.map_atoms(f)).collect(),
                                derivs: derivs.clone(),
                            };
                            f(&mapped)
                        }
                        other => f(other),
                    };
                    nm.insert_raw(na, e.clone());
                }
                out.add_term(nm, c.clone());
            }
            out
        };
        Expr::make(map_poly(&self.num), map_poly(&self.den))
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.num.collect_atoms(&mut out);
        self.den.collect_atoms(&mut out);
        out
    }

    pub fn contains_atom(&self, a: &Atom) -> bool {
        self.atoms().contains(a)
    }

    /// Highest jet order appearing anywhere, or None for jet-free input.
    pub fn max_jet_order(&self) -> Option<usize> {
        self.atoms().iter().filter_map(|a| a.jet_order()).max()
    }

    /// Constant expressions collapse to their scalar value.
    pub fn as_scalar(&self) -> Option<QdScalar> {
        if self.is_zero() {
            return Some(QdScalar::zero());
        }
        if self.den != Poly::one() || self.num.term_count() != 1 {
            return None;
        }
        let (m, c) = self.num.leading()?;
        if m.is_one() {
            Some(c.clone())
        } else {
            None
        }
    }

    /// Numerator cleared of monomial and scalar content: the canonical
    /// polynomial form of the equation `self = 0`.
    pub fn cleared_numerator(&self) -> Poly {
        self.num.primitive_part()
    }

    /// If the expression is exactly one atom (unit coefficient, first
    /// power), return it.
    pub fn as_single_atom(&self) -> Option<Atom> {
        if self.den != Poly::one() || self.num.term_count() != 1 {
            return None;
        }
        let (m, c) = self.num.leading()?;
        if !c.is_one() {
            return None;
        }
        let mut atoms = m.iter();
        let (a, e) = atoms.next()?;
        if atoms.next().is_some() || !e.is_one() {
            return None;
        }
        Some(a.clone())
    }
}

fn scalar_pow(c: &QdScalar, e: &QdScalar) -> Option<QdScalar> {
    if c.is_one() {
        return Some(QdScalar::one());
    }
    if let Some(k) = e.to_integer() {
        use num::ToPrimitive;
        return c.powi(k.to_i64()?).ok();
    }
    // Only rational exponents with denominator 2 act on non-unit coefficients.
    let (a, b, _) = e.parts();
    if !b.is_zero() {
        return None;
    }
    let double = a * BigRational::from_integer(2.into());
    if !double.is_integer() {
        return None;
    }
    use num::ToPrimitive;
    let n = double.to_integer().to_i64()?; // exponent is n/2
    let root = c.try_sqrt(0)?;
    root.powi(n).ok()
}

fn subst_in_poly(p: &Poly, target: &Atom, repl: &Expr) -> Result<Expr, ExprError> {
    let mut out = Expr::zero();
    for (m, c) in p.terms() {
        let mut rest = Monomial::one();
        let mut powered = Expr::one();
        for (a, e) in m.iter() {
            // Substitution also descends into ufunc arguments.
            let a_mapped = match a {
                Atom::Ufunc { name, args, derivs } => {
                    let mut new_args = Vec::with_capacity(args.len());
                    for arg in args {
                        new_args.push(arg.subst_atom(target, repl)?);
                    }
                    Atom::Ufunc { name: name.clone(), args: new_args, derivs: derivs.clone() }
                }
                other => other.clone(),
            };
            if &a_mapped == target {
                powered = powered.mul(&repl.pow(e).map_err(|err| match err {
                    ExprError::BadPower { .. } => ExprError::NonIntegerSubstitution {
                        atom: format!("{a_mapped:?}"),
                        exponent: e.to_string(),
                    },
                    other => other,
                })?);
            } else {
                rest.insert_raw(a_mapped, e.clone());
            }
        }
        let term = Expr::from_poly(Poly::from_term(rest, c.clone())).mul(&powered);
        out = out.add(&term);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Display
// ---------------------------------------------------------------------------

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Coord(n) | Atom::Param(n) => write!(f, "{n}"),
            Atom::Sin(a) => write!(f, "sin({a})"),
            Atom::Cos(a) => write!(f, "cos({a})"),
            Atom::Jet { field, derivs } => {
                if derivs.is_empty() {
                    write!(f, "{field}")
                } else {
                    write!(f, "{field}_{}", derivs.concat())
                }
            }
            Atom::Ufunc { name, args, derivs } => {
                write!(f, "{name}")?;
                if args.len() == 1 {
                    for _ in derivs {
                        write!(f, "'")?;
                    }
                } else if !derivs.is_empty() {
                    write!(f, "[")?;
                    for (i, d) in derivs.iter().enumerate() {
                        if i > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{d}")?;
                    }
                    write!(f, "]")?;
                }
                write!(f, "(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn fmt_term(f: &mut fmt::Formatter<'_>, m: &Monomial, c: &QdScalar) -> fmt::Result {
    let mut wrote = false;
    if m.is_one() {
        return write!(f, "{c}");
    }
    if !c.is_one() {
        if c.is_rational() {
            write!(f, "{c}*")?;
        } else {
            write!(f, "({c})*")?;
        }
        wrote = true;
    }
    let _ = wrote;
    let mut first = true;
    for (a, e) in m.iter() {
        if !first {
            write!(f, "*")?;
        }
        first = false;
        write!(f, "{a}")?;
        if !e.is_one() {
            if e.is_integer() && e.sign() > 0 {
                write!(f, "^{e}")?;
            } else {
                write!(f, "^({e})")?;
            }
        }
    }
    Ok(())
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        // Descending monomial order reads leading-term-first.
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            if i == 0 {
                if c.sign() < 0 {
                    write!(f, "-")?;
                    fmt_term(f, m, &c.neg_ref())?;
                } else {
                    fmt_term(f, m, c)?;
                }
            } else if c.sign() < 0 {
                write!(f, " - ")?;
                fmt_term(f, m, &c.neg_ref())?;
            } else {
                write!(f, " + ")?;
                fmt_term(f, m, c)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == Poly::one() {
            return write!(f, "{}", self.num);
        }
        if self.num.term_count() > 1 {
            write!(f, "({})", self.num)?;
        } else {
            write!(f, "{}", self.num)?;
        }
        if self.den.term_count() > 1 {
            write!(f, "/({})", self.den)
        } else {
            write!(f, "/{}", self.den)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::coord("x")
    }

    fn t() -> Expr {
        Expr::coord("t")
    }

    #[test]
    fn pythagorean_identity_is_zero() {
        let s = Expr::sin("theta");
        let c = Expr::cos("theta");
        let e = s.mul(&s).add(&c.mul(&c)).sub(&Expr::one());
        assert!(e.is_zero(), "got {e}");
    }

    #[test]
    fn rational_cancellation_via_equality() {
        // (t^2 - x^2)/(t + x) == t - x
        let num = t().mul(&t()).sub(&x().mul(&x()));
        let den = t().add(&x());
        let q = num.div(&den).unwrap();
        assert!(q.equals(&t().sub(&x())));
        assert!(!q.equals(&t().add(&x())));
    }

    #[test]
    fn sine_in_denominator_cancels() {
        // (1 - cos^2)/sin == sin
        let s = Expr::sin("th");
        let c = Expr::cos("th");
        let lhs = Expr::one().sub(&c.mul(&c)).div(&s).unwrap();
        assert!(lhs.equals(&s));
    }

    #[test]
    fn laurent_shift_into_numerator() {
        // 1/t^2 is a single numerator term with exponent -2
        let e = Expr::one().div(&t().powi(2).unwrap()).unwrap();
        assert_eq!(e.den(), &Poly::one());
        assert_eq!(e.num().term_count(), 1);
        assert_eq!(e.to_string(), "t^(-2)");
    }

    #[test]
    fn fractional_powers_on_monomials() {
        let y = Expr::coord("y");
        let half = QdScalar::from_frac(1, 2);
        let r = y.pow(&half).unwrap();
        assert_eq!(r.to_string(), "y^(1/2)");
        assert!(r.mul(&r).equals(&y));
        // 4*y -> 2*y^(1/2)
        let e = y.scale(&QdScalar::from_int(4)).pow(&half).unwrap();
        assert!(e.equals(&y.pow(&half).unwrap().scale(&QdScalar::from_int(2))));
        // fractional power of a sum is rejected
        assert!(y.add(&t()).pow(&half).is_err());
    }

    #[test]
    fn radical_exponents_multiply_out() {
        let s7 = QdScalar::sqrt_d(7).unwrap();
        let a = t().pow(&s7).unwrap();
        let b = t().pow(&s7.neg_ref()).unwrap();
        assert!(a.mul(&b).is_one());
        let c = a.mul(&a); // t^(2 sqrt 7)
        assert_eq!(c.to_string(), "t^(2*sqrt(7))");
    }

    #[test]
    fn substitution_expands_powers() {
        // (x^2)|_{x -> t+1} = t^2 + 2t + 1
        let e = x().powi(2).unwrap();
        let r = e.subst_atom(&Atom::coord("x"), &t().add(&Expr::one())).unwrap();
        let expect = t().powi(2).unwrap().add(&t().scale(&QdScalar::from_int(2))).add(&Expr::one());
        assert!(r.equals(&expect));
    }

    #[test]
    fn substitution_reaches_ufunc_arguments() {
        let fx = Expr::atom(Atom::ufunc("f", vec![x()], vec![]));
        let r = fx.subst_atom(&Atom::coord("x"), &t()).unwrap();
        assert_eq!(r.to_string(), "f(t)");
    }

    #[test]
    fn denominator_scalar_normalization() {
        // (2x)/(2t) normalizes to x/t = x*t^(-1)
        let e = x().scale(&QdScalar::from_int(2)).div(&t().scale(&QdScalar::from_int(2))).unwrap();
        assert_eq!(e.to_string(), "t^(-1)*x");
    }

    #[test]
    fn trig_denominator_stays_in_place() {
        let s = Expr::sin("theta");
        let e = x().div(&s).unwrap();
        assert_eq!(e.den(), &Poly::from_term(Monomial::atom(Atom::Sin("theta".into())), QdScalar::one()));
        // and multiplying back by sin(theta) clears it exactly
        assert!(e.mul(&s).equals(&x()));
    }

    #[test]
    fn division_by_zero_expression() {
        assert_eq!(x().div(&Expr::zero()), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn cleared_numerator_is_primitive() {
        // 4x/t - 2x^2/t: numerator 4x - 2x^2 over t, cleared = x*(-... )
        let e = x()
            .scale(&QdScalar::from_int(6))
            .div(&t())
            .unwrap()
            .sub(&x().powi(2).unwrap().scale(&QdScalar::from_int(4)).div(&t()).unwrap());
        let p = e.cleared_numerator();
        // content 2 and monomial x*t^(-1) removed; leading coefficient positive
        assert_eq!(p.to_string(), "2*x - 3");
    }

    #[test]
    fn jet_suffixes_sort_on_construction() {
        let j = Expr::jet("u", &["x", "t"]);
        assert_eq!(j.to_string(), "u_tx");
        assert_eq!(Atom::jet("u", &["x", "t"]), Atom::jet("u", &["t", "x"]));
    }

    #[test]
    fn scalar_collapse() {
        let e = t().sub(&t()).add(&Expr::from_frac_parts(3, 2));
        assert_eq!(e.as_scalar(), Some(QdScalar::from_frac(3, 2)));
        assert_eq!(t().as_scalar(), None);
    }

    #[test]
    fn exact_division_recovers_factors() {
        // (x^2 - t^2) / (x - t) = x + t
        let num = x().powi(2).unwrap().sub(&t().powi(2).unwrap());
        let d = x().sub(&t());
        let q = num.num().try_div_exact(d.num()).unwrap();
        assert_eq!(Expr::from_poly(q), x().add(&t()));
        // non-divisible pairs are rejected, including across Laurent shifts
        assert!(x().add(&t()).num().try_div_exact(d.num()).is_none());
        let lau = x().powi(-1).unwrap().add(&t()).num().clone();
        assert!(lau.try_div_exact(d.num()).is_none());
    }

    #[test]
    fn cancel_strips_known_common_factors() {
        // (x - t)^2 * (x + t) / ((x - t) * t) with the factor supplied
        let f = x().sub(&t());
        let num = f.mul(&f).mul(&x().add(&t()));
        let den = f.mul(&t());
        let e = num.div(&den).unwrap();
        let reduced = e.cancel(&[f.num().clone()]);
        assert!(reduced.equals(&e));
        // one (x - t) cancels; the single-term t denominator then folds away
        assert!(reduced.den().is_one());
        assert_eq!(reduced.num().term_count(), 2);
        // a ratio that is secretly polynomial collapses without hints
        let g = x().powi(2).unwrap().sub(&t().powi(2).unwrap()).div(&x().add(&t())).unwrap();
        assert!(g.cancel(&[]).den().is_one());
        assert!(g.cancel(&[]).equals(&x().sub(&t())));
    }
}
