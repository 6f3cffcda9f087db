//! Metric geometry: exact inverse metrics, the curved-space wave operator
//! in divergence form, quadratic first-order Lagrangians, and comparison of
//! equations up to a jet-free unit factor.

use crate::context::Context;
use crate::expr::{Atom, Expr, Monomial, Poly};
use crate::jet::{total_derivative, JetError, Pde, SideRelation};
use crate::scalar::QdScalar;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("metric entry g[{0}][{1}] is not symmetric")]
    NotSymmetric(usize, usize),
    #[error("metric determinant vanishes identically")]
    Singular,
    #[error("square of the provided area factor differs from ±det(g)")]
    HintMismatch,
    #[error("determinant is not a perfect square; provide an area factor hint")]
    NeedHint,
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

#[derive(Debug, Clone)]
pub struct Metric {
    pub g: Vec<Vec<Expr>>,
    pub inv: Vec<Vec<Expr>>,
    pub det: Expr,
    /// The positive area factor `sqrt(|det g|)`.
    pub sqrt_det: Expr,
    /// Polynomials that tend to divide out of quotients built from this
    /// metric: the entries' numerators and denominators, the determinant,
    /// and `1 - cos^2` for each angular coordinate.  Curved metrics leave a
    /// large cofactor/determinant overlap behind otherwise.
    factors: Vec<Poly>,
}

fn determinant(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut det = Expr::zero();
    for j in 0..n {
        if m[0][j].is_zero() {
            continue;
        }
        let minor: Vec<Vec<Expr>> = (1..n)
            .map(|i| {
                (0..n).filter(|&c| c != j).map(|c| m[i][c].clone()).collect()
            })
            .collect();
        let mut term = m[0][j].mul(&determinant(&minor));
        if j % 2 == 1 {
            term = term.neg();
        }
        det = det.add(&term);
    }
    det
}

impl Metric {
    pub fn new(
        entries: Vec<Vec<Expr>>,
        hint: Option<Expr>,
        ctx: &Context,
    ) -> Result<Self, GeometryError> {
        let n = ctx.coords().len();
        assert_eq!(entries.len(), n, "metric must be {n}x{n}");
        for (i, row) in entries.iter().enumerate() {
            assert_eq!(row.len(), n, "metric must be {n}x{n}");
            for j in 0..i {
                if !entries[i][j].equals(&entries[j][i]) {
                    return Err(GeometryError::NotSymmetric(i, j));
                }
            }
        }
        let det = determinant(&entries);
        if det.is_zero() {
            return Err(GeometryError::Singular);
        }
        let mut factors: Vec<Poly> = Vec::new();
        let mut push_factor = |p: &Poly| {
            if p.term_count() > 1 && !factors.contains(p) {
                factors.push(p.clone());
            }
        };
        for row in &entries {
            for e in row {
                push_factor(e.num());
                push_factor(e.den());
            }
        }
        push_factor(det.num());
        push_factor(det.den());
        for ang in ctx.angular() {
            let cos2 = Monomial::one().merged(Atom::Cos(ang.clone()), QdScalar::from_int(2));
            push_factor(&Poly::one().sub(&Poly::from_term(cos2, QdScalar::one())));
        }
        let mut inv = vec![vec![Expr::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let minor: Vec<Vec<Expr>> = (0..n)
                    .filter(|&r| r != j)
                    .map(|r| {
                        (0..n)
                            .filter(|&c| c != i)
                            .map(|c| entries[r][c].clone())
                            .collect()
                    })
                    .collect();
                let mut cof = determinant(&minor);
                if (i + j) % 2 == 1 {
                    cof = cof.neg();
                }
                inv[i][j] = cof.div(&det)?.cancel(&factors);
            }
        }
        let sqrt_det = match hint {
            Some(h) => {
                let sq = h.mul(&h);
                if sq.equals(&det) || sq.equals(&det.neg()) {
                    h
                } else {
                    return Err(GeometryError::HintMismatch);
                }
            }
            None => match det.as_scalar() {
                Some(s) => match s.abs().try_sqrt(ctx.radical()) {
                    Some(r) => Expr::scalar(r),
                    None => return Err(GeometryError::NeedHint),
                },
                None => return Err(GeometryError::NeedHint),
            },
        };
        Ok(Metric { g: entries, inv, det, sqrt_det, factors })
    }

    /// `sum_a D_a(W g^{ab} u_b)`: the wave operator scaled by the area
    /// factor, a manifest divergence.
    /// The polynomials worth trying as common factors of quotients built
    /// from this metric; useful for presenting related ratios reduced.
    pub fn cancel_hints(&self) -> &[Poly] {
        &self.factors
    }

    pub fn scaled_box(&self, ctx: &Context) -> Expr {
        let coords = ctx.coords().to_vec();
        let n = coords.len();
        let mut out = Expr::zero();
        for a in 0..n {
            let mut flux = Expr::zero();
            for b in 0..n {
                if self.inv[a][b].is_zero() {
                    continue;
                }
                let ub = Expr::jet(ctx.field(), &[coords[b].as_str()]);
                flux = flux.add(&self.inv[a][b].mul(&ub));
            }
            if flux.is_zero() {
                continue;
            }
            let piece = self.sqrt_det.mul(&flux).cancel(&self.factors);
            out = out
                .add(&total_derivative(&piece, &coords[a], ctx))
                .cancel(&self.factors);
        }
        out
    }

    /// The raw equation `box(u) - source`, as a rational expression.
    pub fn box_equation(&self, source: &Expr, ctx: &Context) -> Result<Expr, GeometryError> {
        Ok(self
            .scaled_box(ctx)
            .div(&self.sqrt_det)?
            .cancel(&self.factors)
            .sub(source))
    }

    /// The divergence-form equation `W*(box(u) - source)`, kept unscaled for
    /// variational work (its Euler expression vanishes for trivial reasons
    /// when the source does).
    pub fn variational_equation(&self, source: &Expr, ctx: &Context) -> Expr {
        self.scaled_box(ctx).sub(&self.sqrt_det.mul(source))
    }

    /// The cleared polynomial equation, solved for a leading derivative.
    pub fn box_pde(
        &self,
        source: &Expr,
        leading: Option<Atom>,
        side_relations: Vec<SideRelation>,
        ctx: &Context,
    ) -> Result<Pde, GeometryError> {
        let raw = self.box_equation(source, ctx)?;
        let cleared = Expr::from_poly(raw.cleared_numerator());
        Ok(Pde::new(cleared, leading, side_relations, ctx)?)
    }

    /// `c * W * g^{ab} u_a u_b - potential`.
    pub fn lagrangian(
        &self,
        c: &QdScalar,
        potential: &Expr,
        ctx: &Context,
    ) -> Expr {
        let coords = ctx.coords().to_vec();
        let n = coords.len();
        let mut quad = Expr::zero();
        for a in 0..n {
            for b in 0..n {
                if self.inv[a][b].is_zero() {
                    continue;
                }
                let ua = Expr::jet(ctx.field(), &[coords[a].as_str()]);
                let ub = Expr::jet(ctx.field(), &[coords[b].as_str()]);
                quad = quad.add(&self.inv[a][b].mul(&ua).mul(&ub));
            }
        }
        self.sqrt_det.mul(&quad).cancel(&self.factors).scale(c).sub(potential)
    }
}

/// True for atoms that carry the dependent field: jets, and function atoms
/// whose arguments involve jets.
fn depends_on_field(a: &Atom) -> bool {
    match a {
        Atom::Jet { .. } => true,
        Atom::Ufunc { args, .. } => {
            args.iter().any(|e| e.atoms().iter().any(depends_on_field))
        }
        _ => false,
    }
}

/// Group the numerator of `e` by its field-carrying monomial part.
pub fn field_split(e: &Expr) -> BTreeMap<Monomial, Poly> {
    let mut out: BTreeMap<Monomial, Poly> = BTreeMap::new();
    for (mon, coeff) in e.num().terms() {
        let mut key = Monomial::one();
        let mut rest = Monomial::one();
        for (a, exp) in mon.iter() {
            if depends_on_field(a) {
                key = key.merged(a.clone(), exp.clone());
            } else {
                rest = rest.merged(a.clone(), exp.clone());
            }
        }
        let add = Poly::from_term(rest, coeff.clone());
        out.entry(key)
            .and_modify(|p| *p = p.add(&add))
            .or_insert(add);
    }
    out.retain(|_, p| !p.is_zero());
    out
}

/// If `a = λ b` for a unit `λ` free of the dependent field (but possibly
/// coordinate-dependent), return `λ`.
pub fn equal_up_to_unit(a: &Expr, b: &Expr) -> Option<Expr> {
    if a.is_zero() && b.is_zero() {
        return Some(Expr::one());
    }
    if a.is_zero() || b.is_zero() {
        return None;
    }
    let sa = field_split(a);
    let sb = field_split(b);
    if sa.len() != sb.len() || !sa.keys().eq(sb.keys()) {
        return None;
    }
    let keys: Vec<&Monomial> = sa.keys().collect();
    let first = keys[0];
    let (pa0, pb0) = (&sa[first], &sb[first]);
    for key in keys.iter().skip(1) {
        let (pa, pb) = (&sa[key], &sb[key]);
        // pa/pb must equal pa0/pb0: cross-multiply
        if !Expr::from_poly(pa.mul(pb0)).equals(&Expr::from_poly(pb.mul(pa0))) {
            return None;
        }
    }
    // λ = (pa0 / pb0) * (den_b / den_a)
    let lambda = Expr::from_poly(pa0.mul(b.den()))
        .div(&Expr::from_poly(pb0.mul(a.den())))
        .ok()?;
    if lambda.max_jet_order().is_some() {
        return None;
    }
    Some(lambda.reduced())
}

/// Outcome of [`compare_up_to_unit`]: either a clean unit, or the best
/// partial unit together with the field monomials that break it.
#[derive(Debug, Clone)]
pub struct UnitComparison {
    /// the unit, or the majority ratio when some monomials disagree
    pub lambda: Option<Expr>,
    /// field monomials whose coefficients are not proportional
    pub mismatched: Vec<Monomial>,
}

impl UnitComparison {
    pub fn matches(&self) -> bool {
        self.lambda.is_some() && self.mismatched.is_empty()
    }
}

/// Like [`equal_up_to_unit`], but on failure isolates which field
/// monomials disagree instead of giving a bare `None`.  The reported
/// ratio is the one consistent with the largest number of monomials.
pub fn compare_up_to_unit(a: &Expr, b: &Expr) -> UnitComparison {
    if let Some(lambda) = equal_up_to_unit(a, b) {
        return UnitComparison { lambda: Some(lambda), mismatched: Vec::new() };
    }
    let sa = field_split(a);
    let sb = field_split(b);
    let mut mismatched: Vec<Monomial> = Vec::new();
    let mut shared: Vec<&Monomial> = Vec::new();
    for k in sa.keys() {
        if sb.contains_key(k) {
            shared.push(k);
        } else {
            mismatched.push(k.clone());
        }
    }
    for k in sb.keys() {
        if !sa.contains_key(k) {
            mismatched.push(k.clone());
        }
    }
    let agrees = |pivot: &Monomial, k: &Monomial| {
        let (pa0, pb0) = (&sa[pivot], &sb[pivot]);
        let (pa, pb) = (&sa[k], &sb[k]);
        Expr::from_poly(pa.mul(pb0)).equals(&Expr::from_poly(pb.mul(pa0)))
    };
    let mut best: Option<(usize, &Monomial)> = None;
    for cand in &shared {
        let votes = shared.iter().filter(|k| agrees(cand, k)).count();
        if best.is_none_or(|(v, _)| votes > v) {
            best = Some((votes, cand));
        }
    }
    let mut lambda = None;
    if let Some((_, pivot)) = best {
        for k in &shared {
            if !agrees(pivot, k) {
                mismatched.push((*k).clone());
            }
        }
        let (pa0, pb0) = (&sa[pivot], &sb[pivot]);
        lambda = Expr::from_poly(pa0.mul(b.den()))
            .div(&Expr::from_poly(pb0.mul(a.den())))
            .ok()
            .filter(|l| l.max_jet_order().is_none())
            .map(|l| l.reduced());
    }
    mismatched.sort();
    UnitComparison { lambda, mismatched }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_expr;

    fn asd_ctx() -> Context {
        Context::new(&["x", "y", "z", "t"], "u").with_ufunc("k", 1, None)
    }

    fn asd_metric(ctx: &Context) -> Metric {
        let z = "0";
        let rows = [
            [z, z, z, "2"],
            [z, z, "2", z],
            [z, "2", z, "4*y/t"],
            ["2", z, "4*y/t", "4*(3*y*z/t^2 - x/t)"],
        ];
        let entries: Vec<Vec<Expr>> = rows
            .iter()
            .map(|r| r.iter().map(|s| parse_expr(s, ctx).unwrap()).collect())
            .collect();
        Metric::new(entries, None, ctx).unwrap()
    }

    #[test]
    fn plane_wave_metric_inverts_exactly() {
        let ctx = asd_ctx();
        let m = asd_metric(&ctx);
        assert!(m.det.equals(&Expr::from_int(16)));
        assert!(m.sqrt_det.equals(&Expr::from_int(4)));
        let want = parse_expr("(x*t - 3*y*z)/t^2", &ctx).unwrap();
        assert!(m.inv[0][0].equals(&want));
        assert!(m.inv[0][1].equals(&parse_expr("-y/t", &ctx).unwrap()));
        assert!(m.inv[0][3].equals(&parse_expr("1/2", &ctx).unwrap()));
        assert!(m.inv[1][2].equals(&parse_expr("1/2", &ctx).unwrap()));
        assert!(m.inv[1][1].is_zero());
        assert!(m.inv[2][3].is_zero());
    }

    #[test]
    fn box_reproduces_quoted_wave_equation() {
        let ctx = asd_ctx();
        let m = asd_metric(&ctx);
        let source = parse_expr("k(u)", &ctx).unwrap();
        let raw = m.box_equation(&source, &ctx).unwrap();
        let quoted = parse_expr(
            "(x*t - 3*y*z)/t^2*u_xx - 2*y/t*u_xy + u_xt + u_yz - k(u)",
            &ctx,
        )
        .unwrap();
        assert!(raw.equals(&quoted));
        let lambda = equal_up_to_unit(&raw, &quoted).unwrap();
        assert!(lambda.is_one());
    }

    #[test]
    fn cleared_equation_picks_mixed_leading() {
        let ctx = asd_ctx();
        let m = asd_metric(&ctx);
        let pde = m.box_pde(&Expr::zero(), None, vec![], &ctx).unwrap();
        assert_eq!(pde.leading, Atom::jet("u", &["t", "x"]));
    }

    #[test]
    fn lagrangian_calibration() {
        let ctx = asd_ctx();
        let m = asd_metric(&ctx);
        let pot = parse_expr("2*k(u)", &ctx).unwrap();
        let l = m.lagrangian(&QdScalar::from_frac(1, 4), &pot, &ctx);
        let want = parse_expr(
            "(t*x - 3*y*z)/t^2*u_x^2 - 2*y/t*u_y*u_x + u_t*u_x + u_z*u_y - 2*k(u)",
            &ctx,
        )
        .unwrap();
        assert!(l.equals(&want));
    }

    #[test]
    fn unit_comparison_allows_coordinate_factors() {
        let ctx = Context::new(&["x", "alpha", "z"], "u");
        let a = parse_expr("(2*x - 6*alpha*z)*u_xx - 6*alpha*u_xalpha + 2*u_zalpha", &ctx)
            .unwrap();
        let b = parse_expr("(x - 3*alpha*z)*u_xx - 3*alpha*u_xalpha + u_zalpha", &ctx)
            .unwrap();
        let lam = equal_up_to_unit(&a, &b).unwrap();
        assert!(lam.equals(&Expr::from_int(2)));
        // coordinate-dependent unit
        let c = a.mul(&parse_expr("z", &ctx).unwrap());
        let lam2 = equal_up_to_unit(&c, &b).unwrap();
        assert!(lam2.equals(&parse_expr("2*z", &ctx).unwrap()));
        // genuinely different equations are not proportional
        let d = parse_expr("(x - 3*alpha*z)*u_xx - 2*alpha*u_xalpha + u_zalpha", &ctx)
            .unwrap();
        assert!(equal_up_to_unit(&a, &d).is_none());
    }

    #[test]
    fn mismatch_isolation_points_at_the_broken_monomials() {
        let ctx = Context::new(&["x", "t"], "u");
        let a = parse_expr("x*u_xx + u_t", &ctx).unwrap();
        let b = parse_expr("2*x*u_xx + 2*u_t + u_tt", &ctx).unwrap();
        let cmp = compare_up_to_unit(&a, &b);
        assert!(!cmp.matches());
        assert!(cmp.lambda.unwrap().equals(&Expr::from_frac_parts(1, 2)));
        assert_eq!(cmp.mismatched.len(), 1);
        assert!(cmp.mismatched[0].contains(&Atom::jet("u", &["t", "t"])));
        // a coefficient slip on either side is caught, not voted away;
        // with a two-way tie the earlier monomial wins the pivot
        let c = parse_expr("2*x*u_xx + 3*u_t", &ctx).unwrap();
        let cmp2 = compare_up_to_unit(&a, &c);
        assert_eq!(cmp2.mismatched.len(), 1);
        assert!(cmp2.mismatched[0].contains(&Atom::jet("u", &["x", "x"])));
        assert!(cmp2.lambda.unwrap().equals(&Expr::from_frac_parts(1, 3)));
        let full = compare_up_to_unit(&a, &a.scale(&QdScalar::from_int(-3)));
        assert!(full.matches());
        assert!(full.lambda.unwrap().equals(&Expr::from_int(-3).inv().unwrap()));
    }

    #[test]
    fn kerr_inverse_metric_cross_term() {
        let ctx = Context::new(&["t", "r", "theta", "phi"], "u")
            .with_angular(&["theta"])
            .with_params(&["M", "k"]);
        let rho2 = "(r^2 + k^2*cos(theta)^2)";
        let delta = "(r^2 - 2*M*r + k^2)";
        let rows = [
            format!("({delta} - k^2*sin(theta)^2)/{rho2}"),
            "0".into(),
            "0".into(),
            format!("2*M*k*r*sin(theta)^2/{rho2}"),
            "0".into(),
            format!("-{rho2}/{delta}"),
            "0".into(),
            "0".into(),
            "0".into(),
            "0".into(),
            format!("-{rho2}"),
            "0".into(),
            format!("2*M*k*r*sin(theta)^2/{rho2}"),
            "0".into(),
            "0".into(),
            format!("-sin(theta)^2*((r^2+k^2)^2 - {delta}*k^2*sin(theta)^2)/{rho2}"),
        ];
        let entries: Vec<Vec<Expr>> = rows
            .chunks(4)
            .map(|r| r.iter().map(|s| parse_expr(s, &ctx).unwrap()).collect())
            .collect();
        let hint = parse_expr(&format!("{rho2}*sin(theta)"), &ctx).unwrap();
        let m = Metric::new(entries, Some(hint), &ctx).unwrap();
        let want = parse_expr(&format!("2*M*k*r/({rho2}*{delta})"), &ctx).unwrap();
        assert!(m.inv[0][3].equals(&want));
        let want_rr = parse_expr(&format!("-{delta}/{rho2}"), &ctx).unwrap();
        assert!(m.inv[1][1].equals(&want_rr));
    }
}
