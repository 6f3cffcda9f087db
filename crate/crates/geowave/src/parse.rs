//! Text form of expressions.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?          // right-associative, binds
//!                                          // tighter than unary minus
//! primary := INT | "(" sum ")" | NAME | NAME "'"* "(" sum ("," sum)* ")"
//! ```
//!
//! Names resolve against a [`Context`]: coordinates, parameters, the field,
//! jets (`u_tx`, suffix read greedily by longest coordinate name), declared
//! functions (with prime derivatives), `sin`/`cos` of an angular coordinate,
//! `sqrt`, and the derivative operator `Diff(expr, v, ...)`.

use crate::context::Context;
use crate::expr::{Atom, Expr};
use crate::jet::{partial_diff, total_derivative};
use crate::scalar::QdScalar;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

fn err<T>(pos: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Prime,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            '\'' => {
                toks.push((Tok::Prime, i));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let text = &src[start..i];
                match text.parse::<i64>() {
                    Ok(n) => toks.push((Tok::Int(n), start)),
                    Err(_) => return err(start, format!("integer literal `{text}` overflows")),
                }
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Name(src[start..i].to_string()), start));
            }
            other => return err(i, format!("unexpected character `{other}`")),
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ctx: &'a Context,
    src_len: usize,
}

pub fn parse_expr(src: &str, ctx: &Context) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, ctx, src_len: src.len() };
    let e = p.sum()?;
    match p.peek() {
        None => Ok(e),
        Some((_, at)) => err(at, "trailing input after expression"),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<(&Tok, usize)> {
        self.toks.get(self.pos).map(|(t, p)| (t, *p))
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if let Some((t, _)) = self.peek() {
            if t == want {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let at = self.here();
        if self.eat(&want) {
            Ok(())
        } else {
            err(at, format!("expected {what}"))
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.product()?;
        loop {
            if self.eat(&Tok::Plus) {
                acc = acc.add(&self.product()?);
            } else if self.eat(&Tok::Minus) {
                acc = acc.sub(&self.product()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                acc = acc.mul(&self.unary()?);
            } else if self.eat(&Tok::Slash) {
                let at = self.here();
                let rhs = self.unary()?;
                acc = match acc.div(&rhs) {
                    Ok(e) => e,
                    Err(e) => return err(at, e.to_string()),
                };
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            Ok(self.unary()?.neg())
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat(&Tok::Caret) {
            return Ok(base);
        }
        let at = self.here();
        let exponent = self.unary()?;
        let sc = match exponent.as_scalar() {
            Some(s) => s,
            None => return err(at, "exponent must be a constant"),
        };
        match base.pow(&sc) {
            Ok(e) => Ok(e),
            Err(e) => err(at, e.to_string()),
        }
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = vec![self.sum()?];
        while self.eat(&Tok::Comma) {
            args.push(self.sum()?);
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.here();
        match self.bump() {
            Some((Tok::Int(n), _)) => Ok(Expr::from_int(n)),
            Some((Tok::LParen, _)) => {
                let e = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some((Tok::Name(name), npos)) => self.name(name, npos),
            Some((t, p)) => err(p, format!("unexpected token `{t:?}`")),
            None => err(at, "unexpected end of input"),
        }
    }

    fn name(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        let mut primes = 0usize;
        while self.eat(&Tok::Prime) {
            primes += 1;
        }
        let called = matches!(self.peek(), Some((Tok::LParen, _)));
        if primes > 0 && !called {
            return err(at, format!("`{name}'` needs an argument list"));
        }
        if !called {
            return self.plain_name(&name, at);
        }
        match name.as_str() {
            "sqrt" => {
                if primes > 0 {
                    return err(at, "`sqrt` takes no derivatives");
                }
                let args = self.call_args()?;
                if args.len() != 1 {
                    return err(at, "`sqrt` takes one argument");
                }
                self.sqrt(&args[0], at)
            }
            "Diff" => {
                if primes > 0 {
                    return err(at, "`Diff` takes no derivatives");
                }
                let open = self.here();
                self.expect(Tok::LParen, "`(`")?;
                let mut e = self.sum()?;
                let mut nvars = 0usize;
                while self.eat(&Tok::Comma) {
                    let vat = self.here();
                    let v = match self.bump() {
                        Some((Tok::Name(v), _)) => v,
                        _ => return err(vat, "`Diff` variables must be plain names"),
                    };
                    nvars += 1;
                    e = if self.ctx.is_coord(&v) {
                        total_derivative(&e, &v, self.ctx)
                    } else if v == self.ctx.field() {
                        partial_diff(&e, &self.ctx.field_atom(), self.ctx)
                    } else if self.ctx.is_param(&v) {
                        partial_diff(&e, &Atom::param(&v), self.ctx)
                    } else {
                        return err(vat, format!("unknown derivative variable `{v}`"));
                    };
                }
                if nvars == 0 {
                    return err(open, "`Diff` needs at least one variable");
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            "sin" | "cos" => {
                if primes > 0 {
                    return err(at, "trig functions take no prime derivatives");
                }
                let args = self.call_args()?;
                let arg = if args.len() == 1 { &args[0] } else { return err(at, "one argument") };
                match arg.as_single_atom() {
                    Some(Atom::Coord(c)) if self.ctx.is_angular(&c) => {
                        if name == "sin" {
                            Ok(Expr::sin(&c))
                        } else {
                            Ok(Expr::cos(&c))
                        }
                    }
                    _ => err(
                        at,
                        format!("`{name}` takes a declared angular coordinate"),
                    ),
                }
            }
            _ => {
                let sig = match self.ctx.ufunc(&name) {
                    Some(s) => s.clone(),
                    None => return err(at, format!("`{name}` is not a declared function")),
                };
                if primes > 0 && sig.arity != 1 {
                    return err(at, "prime derivatives need a one-argument function");
                }
                let args = self.call_args()?;
                if args.len() != sig.arity {
                    return err(
                        at,
                        format!(
                            "`{name}` takes {} argument(s), got {}",
                            sig.arity,
                            args.len()
                        ),
                    );
                }
                Ok(Expr::atom(self.ctx.ufunc_atom(&name, args, vec![0; primes])))
            }
        }
    }

    fn sqrt(&mut self, arg: &Expr, at: usize) -> Result<Expr, ParseError> {
        if let Some(sc) = arg.as_scalar() {
            if let Some(n) = sc.to_integer() {
                use num::ToPrimitive;
                let n = match n.to_i64() {
                    Some(v) if v >= 0 => v as u64,
                    _ => return err(at, "sqrt of a negative or huge integer"),
                };
                let root = (n as f64).sqrt() as u64;
                for r in root.saturating_sub(1)..=root + 1 {
                    if r * r == n {
                        return Ok(Expr::from_int(r as i64));
                    }
                }
                let d = self.ctx.radical() as u64;
                if d > 1 && n % d == 0 {
                    let m = n / d;
                    let mroot = (m as f64).sqrt() as u64;
                    for r in mroot.saturating_sub(1)..=mroot + 1 {
                        if r * r == m {
                            let s = QdScalar::new(
                                num::BigRational::from_integer(0.into()),
                                num::BigRational::from_integer((r as i64).into()),
                                self.ctx.radical(),
                            )
                            .map_err(|e| ParseError { pos: at, msg: e.to_string() })?;
                            return Ok(Expr::scalar(s));
                        }
                    }
                }
                return err(
                    at,
                    format!("sqrt({n}) is not expressible with radical {}", self.ctx.radical()),
                );
            }
        }
        let half = QdScalar::from_frac(1, 2);
        arg.pow(&half).map_err(|e| ParseError { pos: at, msg: e.to_string() })
    }

    fn plain_name(&mut self, name: &str, at: usize) -> Result<Expr, ParseError> {
        if name == self.ctx.field() {
            return Ok(self.ctx.field_expr());
        }
        if self.ctx.is_coord(name) {
            return Ok(Expr::coord(name));
        }
        if self.ctx.is_param(name) {
            return Ok(Expr::param(name));
        }
        if let Some((base, suffix)) = name.split_once('_') {
            if base != self.ctx.field() {
                return err(at, format!("`{base}` is not the dependent field"));
            }
            let derivs = self.jet_suffix(suffix, at)?;
            return Ok(Expr::atom(Atom::jet_owned(base.to_string(), derivs)));
        }
        if self.ctx.ufunc(name).is_some() {
            return err(at, format!("function `{name}` used without arguments"));
        }
        err(at, format!("unknown name `{name}`"))
    }

    fn jet_suffix(&self, suffix: &str, at: usize) -> Result<Vec<String>, ParseError> {
        if suffix.is_empty() {
            return err(at, "empty derivative suffix");
        }
        let coords = self.ctx.coords_longest_first();
        let mut derivs = Vec::new();
        let mut rest = suffix;
        'outer: while !rest.is_empty() {
            for c in &coords {
                if let Some(r) = rest.strip_prefix(c) {
                    derivs.push(c.to_string());
                    rest = r;
                    continue 'outer;
                }
            }
            return err(
                at,
                format!("cannot read `{rest}` in derivative suffix as coordinates"),
            );
        }
        Ok(derivs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn ctx() -> Context {
        Context::new(&["x", "y", "z", "t"], "u").with_params(&["n"]).with_ufunc(
            "k", 1, None,
        )
    }

    fn p(src: &str) -> Expr {
        parse_expr(src, &ctx()).unwrap()
    }

    #[test]
    fn arithmetic_and_jets() {
        let e = p("(x*t - 3*y*z)/t^2");
        let want = Expr::coord("x")
            .mul(&Expr::coord("t"))
            .sub(&Expr::from_int(3).mul(&Expr::coord("y")).mul(&Expr::coord("z")))
            .div(&Expr::coord("t").mul(&Expr::coord("t")))
            .unwrap();
        assert!(e.equals(&want));
        assert_eq!(p("u_tx").to_string(), "u_tx");
        assert_eq!(p("u_xt").to_string(), "u_tx");
    }

    #[test]
    fn radical_exponents() {
        let e = p("t^(2-sqrt(7))");
        assert_eq!(e.to_string(), "t^(2-sqrt(7))");
        assert!(p("t^sqrt(7) * t^-sqrt(7)").is_one());
    }

    #[test]
    fn precedence() {
        assert!(p("-x^2").equals(&p("0 - x^2")));
        assert!(p("2^3^2").equals(&Expr::from_int(512)));
        assert!(p("x^-1").equals(&Expr::one().div(&Expr::coord("x")).unwrap()));
        assert!(p("1/2*x").equals(&Expr::coord("x").scale(&QdScalar::from_frac(1, 2))));
    }

    #[test]
    fn functions_and_diff() {
        let c = ctx();
        let e = parse_expr("Diff(k(u), x)", &c).unwrap();
        let want = Expr::atom(c.ufunc_atom("k", vec![c.field_expr()], vec![0]))
            .mul(&Expr::jet("u", &["x"]));
        assert!(e.equals(&want));
        let e2 = parse_expr("k'(u)", &c).unwrap();
        assert!(e2.equals(&Expr::atom(c.ufunc_atom("k", vec![c.field_expr()], vec![0]))));
    }

    #[test]
    fn greedy_jet_suffix() {
        let c = Context::new(&["t", "r", "theta", "phi"], "u").with_angular(&["theta"]);
        let e = parse_expr("u_thetatheta", &c).unwrap();
        assert_eq!(
            e.as_single_atom().unwrap(),
            Atom::jet("u", &["theta", "theta"])
        );
        let e2 = parse_expr("u_tphi", &c).unwrap();
        assert_eq!(e2.as_single_atom().unwrap(), Atom::jet("u", &["phi", "t"]));
        assert!(parse_expr("sin(theta)^2 + cos(theta)^2", &c).unwrap().is_one());
    }

    #[test]
    fn error_positions() {
        let c = ctx();
        assert!(parse_expr("u_", &c).is_err());
        assert!(parse_expr("u_q", &c).is_err());
        assert!(parse_expr("w + 1", &c).is_err());
        assert!(parse_expr("x +", &c).is_err());
        assert!(parse_expr("sqrt(5)", &c).is_err());
        assert!(parse_expr("5)", &c).is_err());
        let err = parse_expr("x ^ u", &c).unwrap_err();
        assert!(err.msg.contains("constant"), "{err}");
    }

    #[test]
    fn sqrt_forms() {
        let c = ctx();
        assert!(parse_expr("sqrt(4)", &c).unwrap().equals(&Expr::from_int(2)));
        assert!(parse_expr("sqrt(28)", &c)
            .unwrap()
            .equals(&parse_expr("2*sqrt(7)", &c).unwrap()));
        let y = parse_expr("sqrt(y)*sqrt(y)", &c).unwrap();
        assert!(y.equals(&Expr::coord("y")));
    }
}
