//! Conservation-law machinery: Noether fluxes from variational symmetries,
//! divergence checks on solutions, multiplier tests via the variational
//! derivative, and comparison of conserved densities up to a constant.

use crate::context::Context;
use crate::expr::{Atom, Expr};
use crate::geometry::field_split;
use crate::jet::{euler_operator, on_shell_reduce, partial_diff, total_derivative, JetError, Pde};
use crate::oracle::{Oracle, OracleError, Verdict, Witness};
use crate::scalar::QdScalar;
use crate::symmetry::{noether_residual, SymmetryError, VectorField};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConservationError {
    #[error("densities share no field monomial to fix the constant")]
    NoCommonMonomial,
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

/// A current with one component per coordinate; absent components are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Flux {
    pub components: BTreeMap<String, Expr>,
}

impl Flux {
    pub fn new(components: BTreeMap<String, Expr>) -> Self {
        let components = components.into_iter().filter(|(_, e)| !e.is_zero()).collect();
        Flux { components }
    }

    pub fn component(&self, coord: &str) -> Expr {
        self.components.get(coord).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn divergence(&self, ctx: &Context) -> Expr {
        let mut out = Expr::zero();
        for (c, e) in &self.components {
            out = out.add(&total_derivative(e, c, ctx));
        }
        out
    }

    pub fn negated(&self) -> Self {
        Flux {
            components: self.components.iter().map(|(c, e)| (c.clone(), e.neg())).collect(),
        }
    }
}

/// Characteristic of a point field: `W = phi - sum_j xi^j u_j`.
pub fn characteristic(x: &VectorField, ctx: &Context) -> Expr {
    let mut w = x.phi().clone();
    for (c, comp) in x.components() {
        let uc = Expr::jet(ctx.field(), &[c.as_str()]);
        w = w.sub(&comp.mul(&uc));
    }
    w
}

/// Noether current of a variational symmetry of a first-order Lagrangian:
/// `Phi^i = xi^i L + W dL/du_i - f_i`.
pub fn noether_flux(
    x: &VectorField,
    lagrangian: &Expr,
    gauges: Option<&BTreeMap<String, Expr>>,
    ctx: &Context,
) -> Flux {
    let w = characteristic(x, ctx);
    let mut components = BTreeMap::new();
    for c in ctx.coords() {
        let mut phi = x.xi(c).mul(lagrangian);
        let dl = partial_diff(lagrangian, &Atom::jet(ctx.field(), &[c.as_str()]), ctx);
        phi = phi.add(&w.mul(&dl));
        if let Some(fs) = gauges {
            if let Some(f) = fs.get(c) {
                phi = phi.sub(f);
            }
        }
        if !phi.is_zero() {
            components.insert(c.clone(), phi);
        }
    }
    Flux { components }
}

/// Divergence of the current reduced on solutions of `pde`.
pub fn divergence_on_shell(
    flux: &Flux,
    pde: &Pde,
    ctx: &Context,
) -> Result<Expr, JetError> {
    on_shell_reduce(&flux.divergence(ctx), pde, ctx)
}

/// Variational-derivative test for the divergence condition: the gauge term
/// is annihilated, so a field is variational iff this residual vanishes
/// identically.
pub fn variational_test(
    x: &VectorField,
    lagrangian: &Expr,
    ctx: &Context,
) -> Result<Expr, ConservationError> {
    let r = noether_residual(x, lagrangian, None, ctx)?;
    let order = r.max_jet_order().unwrap_or(0);
    Ok(euler_operator(&r, ctx, order.max(2))?)
}

/// Multiplier condition: `E_u[q * delta]` must vanish identically.
pub fn multiplier_residual(
    q: &Expr,
    delta: &Expr,
    ctx: &Context,
) -> Result<Expr, ConservationError> {
    let product = q.mul(delta);
    let order = product.max_jet_order().unwrap_or(0);
    Ok(euler_operator(&product, ctx, order)?)
}

pub fn multiplier_check(
    q: &Expr,
    delta: &Expr,
    ctx: &Context,
    oracle: &Oracle,
) -> Result<Verdict, ConservationError> {
    let r = multiplier_residual(q, delta, ctx)?;
    Ok(oracle.confirm(&r, ctx)?)
}

/// Pairing check: `div Phi = q * delta` as an identity off solutions.
pub fn pair_residual(flux: &Flux, q: &Expr, delta: &Expr, ctx: &Context) -> Expr {
    flux.divergence(ctx).sub(&q.mul(delta))
}

/// Outcome of comparing a constructed density against a quoted one.
#[derive(Debug, Clone)]
pub enum DensityMatch {
    /// `constructed = lambda * quoted` on solutions; `exact` when the
    /// difference vanishes identically.
    Proportional { lambda: QdScalar, exact: bool },
    Mismatch { residual: Expr, witness: Witness },
}

impl DensityMatch {
    pub fn matched(&self) -> bool {
        matches!(self, DensityMatch::Proportional { .. })
    }
}

/// Compare two conserved densities up to a constant factor, allowing a
/// difference that vanishes on solutions of `pde`.
pub fn compare_density(
    constructed: &Expr,
    quoted: &Expr,
    pde: &Pde,
    ctx: &Context,
    oracle: &Oracle,
) -> Result<DensityMatch, ConservationError> {
    let ca = field_split(constructed);
    let cb = field_split(quoted);
    let mut candidates: Vec<QdScalar> = Vec::new();
    for (key, pa) in &ca {
        if key.is_one() {
            continue;
        }
        let Some(pb) = cb.get(key) else { continue };
        let ratio = Expr::from_poly(pa.clone())
            .div(&Expr::from_poly(pb.clone()))?
            .div(&Expr::from_poly(constructed.den().clone()))?
            .mul(&Expr::from_poly(quoted.den().clone()));
        if let Some(lambda) = ratio.as_scalar() {
            if !candidates.contains(&lambda) {
                candidates.push(lambda);
            }
        }
    }
    if candidates.is_empty() {
        return Err(ConservationError::NoCommonMonomial);
    }
    let mut first_failure = None;
    for lambda in candidates {
        let diff = constructed.sub(&quoted.scale(&lambda));
        let exact = diff.is_zero();
        let reduced = if exact { diff } else { on_shell_reduce(&diff, pde, ctx)? };
        if reduced.is_zero() {
            return Ok(DensityMatch::Proportional { lambda, exact });
        }
        match oracle.confirm(&reduced, ctx)? {
            Verdict::Holds => return Ok(DensityMatch::Proportional { lambda, exact }),
            Verdict::Fails { residual, witness } => {
                if first_failure.is_none() {
                    first_failure = Some((residual, witness));
                }
            }
            Verdict::Inconsistent { residual } => {
                if first_failure.is_none() {
                    first_failure = Some((residual, Witness { points: vec![] }));
                }
            }
        }
    }
    let (residual, witness) = first_failure.expect("at least one candidate was tested");
    Ok(DensityMatch::Mismatch { residual, witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_expr;

    fn wave_ctx() -> Context {
        Context::new(&["t", "x"], "u")
    }

    fn asd_ctx() -> Context {
        Context::new(&["x", "y", "z", "t"], "u")
    }

    fn field(ctx: &Context, comps: &[(&str, &str)], phi: &str) -> VectorField {
        let xi = comps
            .iter()
            .map(|(c, e)| (c.to_string(), parse_expr(e, ctx).unwrap()))
            .collect();
        VectorField::new(xi, parse_expr(phi, ctx).unwrap(), ctx).unwrap()
    }

    #[test]
    fn energy_multiplier_of_the_string_equation() {
        let c = wave_ctx();
        let delta = parse_expr("u_tt - u_xx", &c).unwrap();
        let q = parse_expr("u_t", &c).unwrap();
        assert!(multiplier_residual(&q, &delta, &c).unwrap().is_zero());
        let flux = Flux::new(
            [
                ("t".to_string(), parse_expr("(u_t^2 + u_x^2)/2", &c).unwrap()),
                ("x".to_string(), parse_expr("-u_t*u_x", &c).unwrap()),
            ]
            .into(),
        );
        assert!(pair_residual(&flux, &q, &delta, &c).is_zero());
    }

    #[test]
    fn non_multiplier_is_rejected() {
        let c = wave_ctx();
        let delta = parse_expr("u_tt - u_xx", &c).unwrap();
        // q = u fails: E_u[u * delta] = 2 * delta
        let q = parse_expr("u", &c).unwrap();
        let r = multiplier_residual(&q, &delta, &c).unwrap();
        assert!(r.equals(&delta.scale(&QdScalar::from_int(2))));
        let o = Oracle::default();
        assert!(!multiplier_check(&q, &delta, &c, &o).unwrap().holds());
        // while the cubic characteristic u_t*u_x passes (both products are
        // total divergences)
        let q = parse_expr("u_t*u_x", &c).unwrap();
        assert!(multiplier_residual(&q, &delta, &c).unwrap().is_zero());
    }

    #[test]
    fn drift_field_gives_the_quoted_density() {
        // the drift field t d/dx on the quadratic Lagrangian of the
        // plane-wave background
        let c = asd_ctx();
        let l = parse_expr(
            "(t*x - 3*y*z)/t^2*u_x^2 - 2*y/t*u_y*u_x + u_t*u_x + u_z*u_y",
            &c,
        )
        .unwrap();
        let x = field(&c, &[("x", "t")], "0");
        // strict variational condition holds with no gauge term
        assert!(noether_residual(&x, &l, None, &c).unwrap().is_zero());
        assert!(variational_test(&x, &l, &c).unwrap().is_zero());
        let flux = noether_flux(&x, &l, None, &c);
        let quoted = parse_expr("-t*u_x^2", &c).unwrap();
        assert!(flux.component("t").equals(&quoted));
        // and the full current is conserved on solutions
        let delta = parse_expr(
            "(t*x - 3*y*z)/t^2*u_xx - 2*y/t*u_xy + u_xt + u_yz",
            &c,
        )
        .unwrap();
        let pde = Pde::new(delta, None, vec![], &c).unwrap();
        assert!(divergence_on_shell(&flux, &pde, &c).unwrap().is_zero());
    }

    #[test]
    fn density_comparison_finds_the_constant() {
        let c = asd_ctx();
        let delta = parse_expr("u_xt + u_yz", &c).unwrap();
        let pde = Pde::new(delta.clone(), None, vec![], &c).unwrap();
        let o = Oracle::default();
        let a = parse_expr("-t*u_x^2", &c).unwrap();
        let b = parse_expr("-2*t*u_x^2", &c).unwrap();
        match compare_density(&a, &b, &pde, &c, &o).unwrap() {
            DensityMatch::Proportional { lambda, exact } => {
                assert_eq!(lambda, QdScalar::from_frac(1, 2));
                assert!(exact);
            }
            m => panic!("expected proportional, got {m:?}"),
        }
        // equality that only holds on solutions
        let shifted = a.add(&parse_expr("x", &c).unwrap().mul(&delta));
        match compare_density(&shifted, &a, &pde, &c, &o).unwrap() {
            DensityMatch::Proportional { lambda, exact } => {
                assert_eq!(lambda, QdScalar::one());
                assert!(!exact);
            }
            m => panic!("expected on-shell match, got {m:?}"),
        }
        // and a genuine mismatch is witnessed
        let wrong = parse_expr("-t*u_x^2 + u_y^2", &c).unwrap();
        match compare_density(&wrong, &a, &pde, &c, &o).unwrap() {
            DensityMatch::Mismatch { witness, .. } => assert!(!witness.points.is_empty()),
            m => panic!("expected mismatch, got {m:?}"),
        }
    }

    #[test]
    fn gauge_term_enters_the_flux() {
        let c = wave_ctx();
        let l = parse_expr("u_t^2 - u_x^2", &c).unwrap();
        let x = field(&c, &[], "t");
        // pr X(L) = 2 u_t = D_t(2u) exactly; gauge f_t = 2u
        let gauges: BTreeMap<String, Expr> =
            [("t".to_string(), parse_expr("2*u", &c).unwrap())].into();
        let gauge_vec: Vec<Expr> = c
            .coords()
            .iter()
            .map(|co| gauges.get(co).cloned().unwrap_or_else(Expr::zero))
            .collect();
        let r = noether_residual(&x, &l, Some(&gauge_vec), &c).unwrap();
        assert!(r.is_zero());
        let flux = noether_flux(&x, &l, Some(&gauges), &c);
        assert!(flux.component("t").equals(&parse_expr("2*t*u_t - 2*u", &c).unwrap()));
        let delta = parse_expr("u_tt - u_xx", &c).unwrap();
        let pde = Pde::new(delta, None, vec![], &c).unwrap();
        assert!(divergence_on_shell(&flux, &pde, &c).unwrap().is_zero());
    }
}
