//! Symbolic toolkit for wave operators on curved backgrounds: exact jet-space
//! expressions, Lie/Noether symmetry checking, conservation-law verification,
//! and symmetry reduction, with a high-precision numeric cross-check oracle.

pub mod bigfloat;
pub mod context;
pub mod expr;
pub mod geometry;
pub mod jet;
pub mod model;
pub mod oracle;
pub mod conservation;
pub mod parse;
pub mod reduction;
pub mod scalar;
pub mod symmetry;

pub use expr::{Atom, Expr, ExprError, Monomial, Poly};
pub use scalar::{QdScalar, ScalarError};
