//! Session context: which names are coordinates, parameters, the dependent
//! field, angular coordinates (the ones `sin`/`cos` may take), the session
//! radical `d`, and the registry of uninterpreted functions.
//!
//! A reduction step moves to a new chart, which is just another `Context`
//! with its own coordinates and field name.

use crate::expr::{Atom, Expr};
use std::collections::BTreeMap;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UfuncSig {
    pub arity: usize,
    /// Name the first derivative collapses to (`h` with alias `k` makes
    /// d/du h(u) construct the atom `k(u)`).  Single-argument functions only.
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    coords: Vec<String>,
    angular: BTreeSet<String>,
    params: BTreeSet<String>,
    field: String,
    d: u32,
    ufuncs: BTreeMap<String, UfuncSig>,
}

impl Context {
    pub fn new(coords: &[&str], field: &str) -> Self {
        Context {
            coords: coords.iter().map(|s| s.to_string()).collect(),
            angular: BTreeSet::new(),
            params: BTreeSet::new(),
            field: field.to_string(),
            d: 7,
            ufuncs: BTreeMap::new(),
        }
    }

    pub fn with_params(mut self, params: &[&str]) -> Self {
        self.params.extend(params.iter().map(|s| s.to_string()));
        self
    }

    pub fn with_angular(mut self, angular: &[&str]) -> Self {
        for a in angular {
            assert!(
                self.coords.iter().any(|c| c == a),
                "angular name {a} is not a declared coordinate"
            );
            self.angular.insert(a.to_string());
        }
        self
    }

    pub fn with_radical(mut self, d: u32) -> Self {
        self.d = d;
        self
    }

    pub fn with_ufunc(mut self, name: &str, arity: usize, alias: Option<&str>) -> Self {
        self.ufuncs.insert(
            name.to_string(),
            UfuncSig { arity, alias: alias.map(|s| s.to_string()) },
        );
        self
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn field(&self) -> &str {
        &self.field
    }

    pub fn radical(&self) -> u32 {
        self.d
    }

    pub fn params(&self) -> impl Iterator<Item = &String> {
        self.params.iter()
    }

    pub fn is_coord(&self, name: &str) -> bool {
        self.coords.iter().any(|c| c == name)
    }

    pub fn angular(&self) -> impl Iterator<Item = &String> {
        self.angular.iter()
    }

    pub fn is_angular(&self, name: &str) -> bool {
        self.angular.contains(name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    pub fn ufunc(&self, name: &str) -> Option<&UfuncSig> {
        self.ufuncs.get(name)
    }

    pub fn ufunc_names(&self) -> impl Iterator<Item = &String> {
        self.ufuncs.keys()
    }

    /// The bare dependent field as an order-zero jet atom.
    pub fn field_atom(&self) -> Atom {
        Atom::Jet { field: self.field.clone(), derivs: vec![] }
    }

    pub fn field_expr(&self) -> Expr {
        Expr::atom(self.field_atom())
    }

    /// Construct a (possibly differentiated) uninterpreted-function atom,
    /// collapsing through derivative aliases: with `h -> k` registered,
    /// one derivative of `h(u)` becomes the atom `k(u)`.
    pub fn ufunc_atom(&self, name: &str, args: Vec<Expr>, derivs: Vec<usize>) -> Atom {
        let mut name = name.to_string();
        let mut derivs = derivs;
        derivs.sort_unstable();
        loop {
            match self.ufuncs.get(&name) {
                Some(sig) if sig.arity == 1 && !derivs.is_empty() => {
                    if let Some(next) = &sig.alias {
                        name = next.clone();
                        derivs.pop();
                        continue;
                    }
                }
                _ => {}
            }
            break;
        }
        Atom::ufunc(name, args, derivs)
    }

    /// Coordinate names sorted longest-first, for greedy jet-suffix parsing.
    pub fn coords_longest_first(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.coords.iter().map(|s| s.as_str()).collect();
        v.sort_by_key(|s| std::cmp::Reverse(s.len()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_collapses_one_derivative_per_hop() {
        let ctx = Context::new(&["x", "t"], "u").with_ufunc("h", 1, Some("k")).with_ufunc(
            "k", 1, None,
        );
        let u = ctx.field_expr();
        let a = ctx.ufunc_atom("h", vec![u.clone()], vec![0]);
        assert_eq!(a, Atom::ufunc("k", vec![u.clone()], vec![]));
        // second derivative of h = first derivative of k
        let a2 = ctx.ufunc_atom("h", vec![u.clone()], vec![0, 0]);
        assert_eq!(a2, Atom::ufunc("k", vec![u], vec![0]));
    }

    #[test]
    fn greedy_suffix_ordering() {
        let ctx = Context::new(&["t", "r", "theta", "phi"], "u");
        assert_eq!(ctx.coords_longest_first()[0], "theta");
    }
}
