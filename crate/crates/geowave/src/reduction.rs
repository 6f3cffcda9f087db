//! Symmetry reduction: rewrite an equation in invariant variables of a
//! point symmetry, push generators forward through the change of chart,
//! and derive invariant charts for scaling and translation fields.

use crate::context::Context;
use crate::expr::{Atom, Expr, ExprError};
use crate::jet::{total_derivative_multi, JetError};
use crate::scalar::{QdScalar, ScalarError};
use crate::symmetry::{SymmetryError, VectorField};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("chart order mismatch: map defines `{0}`, chart expects `{1}`")]
    ChartMismatch(String, String),
    #[error("old coordinate `{0}` survives the substitution; the map does not reduce this equation")]
    CoordRemains(String),
    #[error("arguments of `{0}` did not normalize to the new chart")]
    ArgsNotNormalized(String),
    #[error("generator is not in the scaling or translation class; supply invariants manually")]
    SupplyManually,
    #[error("ran out of fresh names for invariant coordinates")]
    NoFreshName,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

/// A change of chart `u(old) = factor(old) * U(new)` with the new
/// coordinates given as functions of the old chart and the old
/// coordinates recovered from the new ones.
#[derive(Debug, Clone)]
pub struct VariableMap {
    /// new coordinates in declaration order: name and its definition over
    /// the old chart
    pub defs: Vec<(String, Expr)>,
    /// `factor` multiplying the new dependent variable, over the old chart
    pub factor: Expr,
    /// old coordinates over the new chart, substituted in order; an entry
    /// may still mention old coordinates that a later entry eliminates
    pub inverses: Vec<(String, Expr)>,
}

fn check_chart(map: &VariableMap, new_ctx: &Context) -> Result<(), ReductionError> {
    for (def, coord) in map.defs.iter().zip(new_ctx.coords()) {
        if &def.0 != coord {
            return Err(ReductionError::ChartMismatch(def.0.clone(), coord.clone()));
        }
    }
    if map.defs.len() != new_ctx.coords().len() {
        return Err(ReductionError::ChartMismatch(
            format!("{} definitions", map.defs.len()),
            format!("{} coordinates", new_ctx.coords().len()),
        ));
    }
    Ok(())
}

/// The old field written through the new one: `factor * U(defs...)`, with
/// `U` kept as an opaque function so total derivatives chain through the
/// invariant definitions.
fn field_through_map(map: &VariableMap, new_field: &str, ectx: &Context) -> Expr {
    let args: Vec<Expr> = map.defs.iter().map(|(_, f)| f.clone()).collect();
    map.factor
        .mul(&Expr::atom(ectx.ufunc_atom(new_field, args, vec![])))
}

fn apply_inverses(e: &Expr, map: &VariableMap) -> Result<Expr, ReductionError> {
    let mut out = e.clone();
    for (old, g) in &map.inverses {
        out = out.subst_atom(&Atom::coord(old.as_str()), g)?;
    }
    Ok(out)
}

/// Verify every occurrence of the placeholder function has exactly the new
/// coordinates as arguments, then rewrite it into jets of the new chart.
fn normalize_placeholder(
    e: &Expr,
    new_ctx: &Context,
    old_ctx: &Context,
) -> Result<Expr, ReductionError> {
    let new_field = new_ctx.field();
    let expected: Vec<Expr> = new_ctx.coords().iter().map(|c| Expr::coord(c)).collect();
    for a in e.atoms() {
        match &a {
            Atom::Ufunc { name, args, .. } if name == new_field => {
                if args.len() != expected.len()
                    || args.iter().zip(&expected).any(|(g, w)| !g.equals(w))
                {
                    return Err(ReductionError::ArgsNotNormalized(name.clone()));
                }
            }
            Atom::Coord(c) if !new_ctx.is_coord(c) && old_ctx.is_coord(c) => {
                return Err(ReductionError::CoordRemains(c.clone()));
            }
            _ => {}
        }
    }
    let mapped = e.map_atoms(&|a| match a {
        Atom::Ufunc { name, derivs, .. } if name == new_field => {
            let slots: Vec<String> =
                derivs.iter().map(|i| new_ctx.coords()[*i].clone()).collect();
            Atom::jet_owned(new_field.to_string(), slots)
        }
        other => other.clone(),
    });
    Ok(mapped)
}

/// Rewrite `delta` in the invariant chart.  The result is the cleared
/// numerator of the substituted equation: overall monomial factors in the
/// surviving pivot coordinate drop out before the leftover check.
pub fn change_variables(
    delta: &Expr,
    map: &VariableMap,
    old_ctx: &Context,
    new_ctx: &Context,
) -> Result<Expr, ReductionError> {
    check_chart(map, new_ctx)?;
    let ectx = old_ctx
        .clone()
        .with_ufunc(new_ctx.field(), map.defs.len(), None);
    let repl = field_through_map(map, new_ctx.field(), &ectx);
    let mut e = delta.clone();
    for a in delta.atoms() {
        if let Atom::Jet { field, derivs } = &a {
            if field == old_ctx.field() {
                let rep = total_derivative_multi(&repl, derivs, &ectx);
                e = e.subst_atom(&a, &rep)?;
            }
        }
    }
    let e = apply_inverses(&e, map)?;
    let cleared = Expr::from_poly(e.num().equation_primitive_part());
    normalize_placeholder(&cleared, new_ctx, old_ctx)
}

/// Push a point field through the chart: the new coordinate components are
/// `X(F_i)` and the field component is `(phi - u X(P)/P)/P`, everything
/// rewritten over the new chart.
pub fn push_forward(
    x: &VectorField,
    map: &VariableMap,
    old_ctx: &Context,
    new_ctx: &Context,
) -> Result<VectorField, ReductionError> {
    check_chart(map, new_ctx)?;
    let ectx = old_ctx
        .clone()
        .with_ufunc(new_ctx.field(), map.defs.len(), None);
    let repl = field_through_map(map, new_ctx.field(), &ectx);
    let to_new = |e: &Expr| -> Result<Expr, ReductionError> {
        let e = e.subst_atom(&old_ctx.field_atom(), &repl)?;
        let e = apply_inverses(&e, map)?;
        normalize_placeholder(&e, new_ctx, old_ctx)
    };
    let mut xi = BTreeMap::new();
    for (name, def) in &map.defs {
        let comp = to_new(&x.point_apply(def, old_ctx))?;
        if !comp.is_zero() {
            xi.insert(name.clone(), comp);
        }
    }
    let u = old_ctx.field_expr();
    let xp = x.point_apply(&map.factor, old_ctx);
    let phi = to_new(
        &x.phi()
            .sub(&u.mul(&xp).div(&map.factor)?)
            .div(&map.factor)?,
    )?;
    Ok(VectorField::new(xi, phi, new_ctx)?)
}

const INVARIANT_NAMES: [&str; 8] =
    ["alpha", "beta", "gamma", "delta", "epsilon", "lambda", "mu", "nu"];

fn fresh_name(taken: &dyn Fn(&str) -> bool) -> Result<String, ReductionError> {
    for base in INVARIANT_NAMES {
        if !taken(base) {
            return Ok(base.to_string());
        }
    }
    for i in 1..64 {
        let cand = format!("w{i}");
        if !taken(&cand) {
            return Ok(cand);
        }
    }
    Err(ReductionError::NoFreshName)
}

fn scaling_coefficient(comp: &Expr, unit: &Expr) -> Option<QdScalar> {
    if comp.is_zero() {
        return Some(QdScalar::zero());
    }
    comp.div(unit).ok()?.as_scalar()
}

/// Derive an invariant chart for a scaling field `sum c_i x_i d_i + c_u u d_u`
/// or a translation field `c d_p`.  Anything else needs a hand-written map.
pub fn invariants(
    x: &VectorField,
    old_ctx: &Context,
) -> Result<(VariableMap, Context), ReductionError> {
    let coords = old_ctx.coords().to_vec();
    let mut scale: Vec<QdScalar> = Vec::new();
    let mut translation_pivot = None;
    let mut is_scaling = true;
    for c in &coords {
        let comp = x.xi(c);
        match scaling_coefficient(&comp, &Expr::coord(c)) {
            Some(k) => scale.push(k),
            None => {
                is_scaling = false;
                scale.push(QdScalar::zero());
                if comp.as_scalar().is_some() && translation_pivot.is_none() {
                    translation_pivot = Some(c.clone());
                } else {
                    return Err(ReductionError::SupplyManually);
                }
            }
        }
    }
    let phi_coeff = scaling_coefficient(x.phi(), &old_ctx.field_expr());
    if is_scaling {
        let pivot = coords
            .iter()
            .position(|c| !scale[old_ctx.coord_index(c).unwrap()].is_zero())
            .ok_or(ReductionError::SupplyManually)?;
        let cp = scale[pivot].clone();
        let cu = phi_coeff.ok_or(ReductionError::SupplyManually)?;
        build_scaling_chart(old_ctx, &coords, pivot, &cp, &scale, &cu)
    } else {
        // translation class: exactly one constant component, no field part
        let pivot = translation_pivot.ok_or(ReductionError::SupplyManually)?;
        if !x.phi().is_zero()
            || coords
                .iter()
                .any(|c| c != &pivot && !x.xi(c).is_zero())
        {
            return Err(ReductionError::SupplyManually);
        }
        build_translation_chart(old_ctx, &coords, &pivot)
    }
}

fn carried_context(old_ctx: &Context, coords: &[&str], field: &str) -> Context {
    let mut ctx = Context::new(coords, field).with_radical(old_ctx.radical());
    let params: Vec<String> = old_ctx.params().cloned().collect();
    let params: Vec<&str> = params.iter().map(|s| s.as_str()).collect();
    ctx = ctx.with_params(&params);
    let angular: Vec<&str> = coords
        .iter()
        .copied()
        .filter(|c| old_ctx.is_angular(c))
        .collect();
    ctx = ctx.with_angular(&angular);
    let names: Vec<String> = old_ctx.ufunc_names().cloned().collect();
    for name in names {
        let sig = old_ctx.ufunc(&name).unwrap();
        ctx = ctx.with_ufunc(&name, sig.arity, sig.alias.as_deref());
    }
    ctx
}

fn reduced_field_name(old_ctx: &Context) -> String {
    let old = old_ctx.field();
    let upper: String = {
        let mut chars = old.chars();
        match chars.next() {
            Some(f) => f.to_uppercase().collect::<String>() + chars.as_str(),
            None => String::new(),
        }
    };
    if upper != old && !old_ctx.is_coord(&upper) && !old_ctx.is_param(&upper) {
        upper
    } else {
        format!("{old}r")
    }
}

fn build_scaling_chart(
    old_ctx: &Context,
    coords: &[String],
    pivot: usize,
    cp: &QdScalar,
    scale: &[QdScalar],
    cu: &QdScalar,
) -> Result<(VariableMap, Context), ReductionError> {
    let mut defs = Vec::new();
    let mut inverses = Vec::new();
    let mut new_names: Vec<String> = Vec::new();
    let pivot_expr = Expr::coord(&coords[pivot]);
    for (i, c) in coords.iter().enumerate() {
        if i == pivot {
            continue;
        }
        if scale[i].is_zero() {
            defs.push((c.clone(), Expr::coord(c)));
            new_names.push(c.clone());
        } else {
            let taken = |n: &str| {
                old_ctx.is_coord(n)
                    || old_ctx.is_param(n)
                    || new_names.iter().any(|m| m == n)
            };
            let name = fresh_name(&taken)?;
            let e = scale[i].checked_div(cp)?;
            defs.push((
                name.clone(),
                Expr::coord(c).mul(&pivot_expr.pow(&e.neg_ref())?),
            ));
            inverses.push((
                c.clone(),
                Expr::coord(&name).mul(&pivot_expr.pow(&e)?),
            ));
            new_names.push(name);
        }
    }
    if defs.is_empty() {
        return Err(ReductionError::SupplyManually);
    }
    let factor = if cu.is_zero() {
        Expr::one()
    } else {
        pivot_expr.pow(&cu.checked_div(cp)?)?
    };
    let field = reduced_field_name(old_ctx);
    let coord_refs: Vec<&str> = new_names.iter().map(|s| s.as_str()).collect();
    let new_ctx = carried_context(old_ctx, &coord_refs, &field);
    Ok((VariableMap { defs, factor, inverses }, new_ctx))
}

fn build_translation_chart(
    old_ctx: &Context,
    coords: &[String],
    pivot: &str,
) -> Result<(VariableMap, Context), ReductionError> {
    let kept: Vec<&str> = coords
        .iter()
        .filter(|c| c.as_str() != pivot)
        .map(|c| c.as_str())
        .collect();
    if kept.is_empty() {
        return Err(ReductionError::SupplyManually);
    }
    let defs = kept
        .iter()
        .map(|c| (c.to_string(), Expr::coord(*c)))
        .collect();
    let field = reduced_field_name(old_ctx);
    let new_ctx = carried_context(old_ctx, &kept, &field);
    Ok((
        VariableMap { defs, factor: Expr::one(), inverses: vec![] },
        new_ctx,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_expr;

    #[test]
    fn translation_reduction_drops_a_coordinate() {
        let old = Context::new(&["x", "y", "z", "t"], "u");
        let x = VectorField::new(
            [("x".to_string(), Expr::one())].into(),
            Expr::zero(),
            &old,
        )
        .unwrap();
        let (map, new_ctx) = invariants(&x, &old).unwrap();
        assert_eq!(new_ctx.coords(), &["y", "z", "t"]);
        assert_eq!(new_ctx.field(), "U");
        let delta = parse_expr("u_xt + u_yz + u", &old).unwrap();
        let reduced = change_variables(&delta, &map, &old, &new_ctx).unwrap();
        let expected = parse_expr("U_yz + U", &new_ctx).unwrap();
        assert!(reduced.equals(&expected));
    }

    #[test]
    fn scaling_reduction_to_an_ode() {
        let old = Context::new(&["t", "x"], "u");
        let x = VectorField::new(
            [
                ("t".to_string(), Expr::coord("t")),
                ("x".to_string(), Expr::coord("x")),
            ]
            .into(),
            Expr::zero(),
            &old,
        )
        .unwrap();
        let (map, new_ctx) = invariants(&x, &old).unwrap();
        assert_eq!(new_ctx.coords(), &["alpha"]);
        // alpha = x / t
        assert!(map.defs[0].1.equals(&parse_expr("x/t", &old).unwrap()));
        let delta = parse_expr("u_tt - u_xx", &old).unwrap();
        let reduced = change_variables(&delta, &map, &old, &new_ctx).unwrap();
        // canonical clearing makes the pure-jet term lead positively
        let expected =
            parse_expr("(1 - alpha^2)*U_alphaalpha - 2*alpha*U_alpha", &new_ctx).unwrap();
        assert!(reduced.equals(&expected));
    }

    #[test]
    fn dependent_factor_changes_the_field() {
        let old = Context::new(&["z"], "u");
        let new_ctx = Context::new(&["z"], "U");
        let map = VariableMap {
            defs: vec![("z".to_string(), Expr::coord("z"))],
            factor: Expr::coord("z"),
            inverses: vec![],
        };
        let delta = parse_expr("z*u_z - u", &old).unwrap();
        let reduced = change_variables(&delta, &map, &old, &new_ctx).unwrap();
        assert!(reduced.equals(&parse_expr("U_z", &new_ctx).unwrap()));
        // push the scaling z dz + u du through: the field part cancels
        let y = VectorField::new(
            [("z".to_string(), Expr::coord("z"))].into(),
            parse_expr("u", &old).unwrap(),
            &old,
        )
        .unwrap();
        let pushed = push_forward(&y, &map, &old, &new_ctx).unwrap();
        assert!(pushed.xi("z").equals(&Expr::coord("z")));
        assert!(pushed.phi().is_zero());
    }

    #[test]
    fn non_invariant_equation_is_rejected() {
        let old = Context::new(&["x", "t"], "u");
        let x = VectorField::new(
            [("x".to_string(), Expr::one())].into(),
            Expr::zero(),
            &old,
        )
        .unwrap();
        let (map, new_ctx) = invariants(&x, &old).unwrap();
        let delta = parse_expr("u_tt + x*u", &old).unwrap();
        match change_variables(&delta, &map, &old, &new_ctx) {
            Err(ReductionError::CoordRemains(c)) => assert_eq!(c, "x"),
            other => panic!("expected leftover coordinate, got {other:?}"),
        }
    }

    #[test]
    fn irrational_scaling_weights_are_exact() {
        let old = Context::new(&["y", "t"], "u");
        let sqrt7 = QdScalar::sqrt_d(7).unwrap();
        let x = VectorField::new(
            [
                ("y".to_string(), Expr::coord("y").scale(&sqrt7)),
                ("t".to_string(), Expr::coord("t")),
            ]
            .into(),
            Expr::zero(),
            &old,
        )
        .unwrap();
        let (map, new_ctx) = invariants(&x, &old).unwrap();
        assert_eq!(new_ctx.coords(), &["alpha"]);
        // alpha = t * y^(-1/sqrt(7)) = t * y^(-sqrt(7)/7)
        let expected = Expr::coord("t")
            .mul(
                &Expr::coord("y")
                    .pow(&QdScalar::one().checked_div(&sqrt7).unwrap().neg_ref())
                    .unwrap(),
            );
        assert!(map.defs[0].1.equals(&expected));
    }

    #[test]
    fn generic_generator_needs_a_manual_map() {
        let old = Context::new(&["x", "t"], "u");
        let x = VectorField::new(
            [("x".to_string(), Expr::coord("t"))].into(),
            Expr::zero(),
            &old,
        )
        .unwrap();
        match invariants(&x, &old) {
            Err(ReductionError::SupplyManually) => {}
            other => panic!("expected manual-map error, got {other:?}"),
        }
    }
}
