//! Sectioned model files.
//!
//! A model file declares a coordinate chart, an optional metric, and the
//! named objects the command-line tools operate on: equations, point
//! operators, flux vectors, multipliers, extra charts, and variable maps.
//! The format is line oriented so the files diff cleanly:
//!
//! ```text
//! [coords]
//! x y z t
//!
//! [metric]
//! g[0][3] = "2"
//! sqrtdet = "4"
//!
//! [generator X8]
//! case = "i"
//! x = "t"
//! ```
//!
//! Every value is a double-quoted string parsed with the expression
//! grammar against the section's chart.  `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::conservation::Flux;
use crate::context::Context;
use crate::expr::Expr;
use crate::geometry::{GeometryError, Metric};
use crate::jet::{JetError, Pde, SideRelation};
use crate::parse::{parse_expr, ParseError};
use crate::reduction::VariableMap;
use crate::symmetry::{SymmetryError, VectorField};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate section [{name}]")]
    DuplicateSection { line: usize, name: String },
    #[error("line {line}: unknown section kind `{kind}`")]
    UnknownSection { line: usize, kind: String },
    #[error("[{section}] unknown key `{key}`")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] missing key `{key}`")]
    MissingKey { section: String, key: String },
    #[error("[{section}] {key}: {source}")]
    BadExpr {
        section: String,
        key: String,
        #[source]
        source: ParseError,
    },
    #[error("metric not symmetric at g[{0}][{1}]")]
    NotSymmetric(usize, usize),
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("[{section}] references unknown {kind} `{name}`")]
    UnknownName {
        section: String,
        kind: &'static str,
        name: String,
    },
    #[error("[{section}] {msg}")]
    Invalid { section: String, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

#[derive(Debug, Clone)]
pub struct ExprSpec {
    pub name: String,
    pub chart: String,
    pub expr: Expr,
}

#[derive(Debug, Clone)]
pub struct EquationSpec {
    pub name: String,
    pub chart: String,
    pub pde: Pde,
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub case: Option<String>,
    pub chart: String,
    pub field: VectorField,
    /// equation the operator is checked against as a symmetry
    pub equation: Option<String>,
    /// named expression used as the Lagrangian in Noether checks
    pub lagrangian: Option<String>,
    /// quoted conserved density (the t-component) to compare against
    pub density: Option<Expr>,
    /// explicit gauge vector, keyed by coordinate; `None` means strict
    pub gauges: Option<BTreeMap<String, Expr>>,
}

#[derive(Debug, Clone)]
pub struct FluxSpec {
    pub name: String,
    pub case: Option<String>,
    pub chart: String,
    pub flux: Flux,
    /// coordinates whose quoted components are sign-flipped relative to
    /// the plain-divergence convention; used as a fallback when the
    /// components fail the divergence test as printed
    pub orientation: Vec<String>,
    pub equation: String,
    pub operator: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MultiplierSpec {
    pub name: String,
    pub case: Option<String>,
    pub q: Expr,
    pub equation: String,
    pub density: Option<Expr>,
}

#[derive(Debug, Clone)]
pub struct MapSpec {
    pub name: String,
    pub from: String,
    pub to: String,
    pub generator: Option<String>,
    pub map: VariableMap,
}

#[derive(Debug)]
pub struct Model {
    charts: Vec<(String, Context)>,
    pub metric: Option<Metric>,
    relations: Vec<(String, SideRelation)>,
    pub exprs: Vec<ExprSpec>,
    pub equations: Vec<EquationSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub fluxes: Vec<FluxSpec>,
    pub multipliers: Vec<MultiplierSpec>,
    pub maps: Vec<MapSpec>,
}

impl Model {
    pub fn base(&self) -> &Context {
        &self.charts[0].1
    }

    pub fn context(&self, chart: &str) -> Option<&Context> {
        self.charts.iter().find(|(n, _)| n == chart).map(|(_, c)| c)
    }

    pub fn relation(&self, name: &str) -> Option<&SideRelation> {
        self.relations.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn named_expr(&self, name: &str) -> Option<&ExprSpec> {
        self.exprs.iter().find(|e| e.name == name)
    }

    pub fn equation(&self, name: &str) -> Option<&EquationSpec> {
        self.equations.iter().find(|e| e.name == name)
    }

    pub fn generator(&self, name: &str) -> Option<&GeneratorSpec> {
        self.generators.iter().find(|g| g.name == name)
    }

    pub fn flux(&self, name: &str) -> Option<&FluxSpec> {
        self.fluxes.iter().find(|f| f.name == name)
    }

    pub fn multiplier(&self, name: &str) -> Option<&MultiplierSpec> {
        self.multipliers.iter().find(|m| m.name == name)
    }

    pub fn map_spec(&self, name: &str) -> Option<&MapSpec> {
        self.maps.iter().find(|m| m.name == name)
    }

    /// The map declared for a generator, if any; `cmd reduce --generator`
    /// prefers this over computed invariants.
    pub fn map_for_generator(&self, generator: &str) -> Option<&MapSpec> {
        self.maps
            .iter()
            .find(|m| m.generator.as_deref() == Some(generator))
    }
}

struct RawSection {
    kind: String,
    name: Option<String>,
    line: usize,
    entries: Vec<(String, String, usize)>,
    bare: Vec<String>,
}

impl RawSection {
    fn title(&self) -> String {
        match &self.name {
            Some(n) => format!("{} {}", self.kind, n),
            None => self.kind.clone(),
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, ModelError> {
        self.get(key).ok_or_else(|| ModelError::MissingKey {
            section: self.title(),
            key: key.to_string(),
        })
    }

    fn check_keys(&self, fixed: &[&str], ok: impl Fn(&str) -> bool) -> Result<(), ModelError> {
        for (k, _, _) in &self.entries {
            if !fixed.contains(&k.as_str()) && !ok(k) {
                return Err(ModelError::UnknownKey {
                    section: self.title(),
                    key: k.clone(),
                });
            }
        }
        Ok(())
    }

    fn parse(&self, key: &str, ctx: &Context) -> Result<Expr, ModelError> {
        self.parse_src(key, self.require(key)?, ctx)
    }

    fn parse_opt(&self, key: &str, ctx: &Context) -> Result<Option<Expr>, ModelError> {
        match self.get(key) {
            Some(src) => Ok(Some(self.parse_src(key, src, ctx)?)),
            None => Ok(None),
        }
    }

    fn parse_src(&self, key: &str, src: &str, ctx: &Context) -> Result<Expr, ModelError> {
        parse_expr(src, ctx).map_err(|source| ModelError::BadExpr {
            section: self.title(),
            key: key.to_string(),
            source,
        })
    }
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_sections(doc: &str) -> Result<Vec<RawSection>, ModelError> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw) in doc.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        if let Some(head) = text.strip_prefix('[') {
            let head = head.strip_suffix(']').ok_or_else(|| ModelError::Syntax {
                line,
                msg: "section header missing `]`".into(),
            })?;
            let mut words = head.split_whitespace();
            let kind = words.next().unwrap_or("").to_string();
            if kind.is_empty() {
                return Err(ModelError::Syntax { line, msg: "empty section header".into() });
            }
            let name = words.next().map(str::to_string);
            if words.next().is_some() {
                return Err(ModelError::Syntax {
                    line,
                    msg: "section header takes at most one name".into(),
                });
            }
            sections.push(RawSection { kind, name, line, entries: Vec::new(), bare: Vec::new() });
            continue;
        }
        let section = sections.last_mut().ok_or_else(|| ModelError::Syntax {
            line,
            msg: "content before the first section header".into(),
        })?;
        if let Some(eq) = text.find('=') {
            let key = text[..eq].trim().to_string();
            let value = text[eq + 1..].trim();
            let inner = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .ok_or_else(|| ModelError::Syntax {
                    line,
                    msg: format!("value for `{key}` must be double-quoted"),
                })?;
            if inner.contains('"') {
                return Err(ModelError::Syntax {
                    line,
                    msg: format!("value for `{key}` has a stray quote"),
                });
            }
            section.entries.push((key, inner.to_string(), line));
        } else {
            section.bare.extend(text.split_whitespace().map(str::to_string));
        }
    }
    Ok(sections)
}

fn bare_only(s: &RawSection) -> Result<(), ModelError> {
    if let Some((k, _, line)) = s.entries.first() {
        return Err(ModelError::Syntax {
            line: *line,
            msg: format!("[{}] takes bare names, not `{k} = ...`", s.kind),
        });
    }
    Ok(())
}

fn duplicate_check(sections: &[RawSection]) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for s in sections {
        if !seen.insert(s.title()) {
            return Err(ModelError::DuplicateSection { line: s.line, name: s.title() });
        }
    }
    Ok(())
}

const SECTION_KINDS: &[&str] = &[
    "coords", "params", "field", "radical", "angular", "metric", "function", "relation", "expr",
    "equation", "chart", "generator", "flux", "multiplier", "map",
];

fn named_kind(kind: &str) -> bool {
    matches!(
        kind,
        "function" | "relation" | "expr" | "equation" | "chart" | "generator" | "flux"
            | "multiplier" | "map"
    )
}

pub fn parse_model(doc: &str) -> Result<Model, ModelError> {
    let sections = split_sections(doc)?;
    duplicate_check(&sections)?;
    for s in &sections {
        if !SECTION_KINDS.contains(&s.kind.as_str()) {
            return Err(ModelError::UnknownSection { line: s.line, kind: s.kind.clone() });
        }
        if named_kind(&s.kind) && s.name.is_none() {
            return Err(ModelError::Syntax {
                line: s.line,
                msg: format!("[{}] needs a name", s.kind),
            });
        }
        if !named_kind(&s.kind) && s.name.is_some() {
            return Err(ModelError::Syntax {
                line: s.line,
                msg: format!("[{}] takes no name", s.kind),
            });
        }
    }
    let find = |kind: &str| sections.iter().find(|s| s.kind == kind);
    let all = |kind: &'static str| sections.iter().filter(move |s| s.kind == kind);

    let coords_sec = find("coords").ok_or(ModelError::MissingSection("coords"))?;
    bare_only(coords_sec)?;
    let coords = coords_sec.bare.clone();
    if coords.is_empty() {
        return Err(ModelError::Invalid {
            section: "coords".into(),
            msg: "no coordinates declared".into(),
        });
    }
    let mut unique = BTreeSet::new();
    for c in &coords {
        if !unique.insert(c.clone()) {
            return Err(ModelError::Invalid {
                section: "coords".into(),
                msg: format!("coordinate `{c}` declared twice"),
            });
        }
    }

    let field_sec = find("field").ok_or(ModelError::MissingSection("field"))?;
    bare_only(field_sec)?;
    let field = match field_sec.bare.as_slice() {
        [one] => one.clone(),
        _ => {
            return Err(ModelError::Invalid {
                section: "field".into(),
                msg: "exactly one dependent field".into(),
            })
        }
    };

    let params: Vec<String> = match find("params") {
        Some(s) => {
            bare_only(s)?;
            s.bare.clone()
        }
        None => Vec::new(),
    };

    let radical: u32 = match find("radical") {
        Some(s) => {
            bare_only(s)?;
            match s.bare.as_slice() {
                [one] => one.parse().map_err(|_| ModelError::Invalid {
                    section: "radical".into(),
                    msg: format!("`{one}` is not a small integer"),
                })?,
                _ => {
                    return Err(ModelError::Invalid {
                        section: "radical".into(),
                        msg: "exactly one integer".into(),
                    })
                }
            }
        }
        None => 7,
    };

    let angular: Vec<String> = match find("angular") {
        Some(s) => {
            bare_only(s)?;
            for a in &s.bare {
                if !coords.contains(a) {
                    return Err(ModelError::Invalid {
                        section: "angular".into(),
                        msg: format!("`{a}` is not a declared coordinate"),
                    });
                }
            }
            s.bare.clone()
        }
        None => Vec::new(),
    };

    struct FuncDecl {
        name: String,
        arity: usize,
        alias: Option<String>,
    }
    let mut funcs = Vec::new();
    for s in all("function") {
        s.check_keys(&["args", "alias"], |_| false)?;
        let args = s.require("args")?;
        let arity = args.split_whitespace().count();
        if arity == 0 {
            return Err(ModelError::Invalid {
                section: s.title(),
                msg: "functions need at least one argument".into(),
            });
        }
        funcs.push(FuncDecl {
            name: s.name.clone().unwrap(),
            arity,
            alias: s.get("alias").map(str::to_string),
        });
    }

    let refs: Vec<&str> = coords.iter().map(String::as_str).collect();
    let param_refs: Vec<&str> = params.iter().map(String::as_str).collect();
    let angular_refs: Vec<&str> = angular.iter().map(String::as_str).collect();
    let mut base = Context::new(&refs, &field)
        .with_params(&param_refs)
        .with_radical(radical)
        .with_angular(&angular_refs);
    for f in &funcs {
        base = base.with_ufunc(&f.name, f.arity, f.alias.as_deref());
    }

    let mut charts: Vec<(String, Context)> = vec![("base".to_string(), base)];
    for s in all("chart") {
        s.check_keys(&["coords", "field", "angular"], |_| false)?;
        let cs: Vec<String> = s
            .require("coords")?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if cs.is_empty() {
            return Err(ModelError::Invalid {
                section: s.title(),
                msg: "no coordinates declared".into(),
            });
        }
        let cfield = s.get("field").unwrap_or(&field).to_string();
        let cang: Vec<String> = match s.get("angular") {
            Some(a) => a.split_whitespace().map(str::to_string).collect(),
            None => angular.iter().filter(|a| cs.contains(a)).cloned().collect(),
        };
        for a in &cang {
            if !cs.contains(a) {
                return Err(ModelError::Invalid {
                    section: s.title(),
                    msg: format!("angular `{a}` is not a chart coordinate"),
                });
            }
        }
        let crefs: Vec<&str> = cs.iter().map(String::as_str).collect();
        let carefs: Vec<&str> = cang.iter().map(String::as_str).collect();
        let mut ctx = Context::new(&crefs, &cfield)
            .with_params(&param_refs)
            .with_radical(radical)
            .with_angular(&carefs);
        for f in &funcs {
            ctx = ctx.with_ufunc(&f.name, f.arity, f.alias.as_deref());
        }
        charts.push((s.name.clone().unwrap(), ctx));
    }
    let chart_of = |s: &RawSection, charts: &[(String, Context)]| -> Result<(String, Context), ModelError> {
        let name = s.get("chart").unwrap_or("base").to_string();
        match charts.iter().find(|(n, _)| *n == name) {
            Some((n, c)) => Ok((n.clone(), c.clone())),
            None => Err(ModelError::UnknownName {
                section: s.title(),
                kind: "chart",
                name,
            }),
        }
    };

    let base_ctx = charts[0].1.clone();
    let metric = match find("metric") {
        Some(s) => {
            let n = coords.len();
            s.check_keys(&["sqrtdet"], |k| parse_metric_key(k, n).is_some())?;
            let mut entries = vec![vec![Expr::zero(); n]; n];
            let mut given = vec![vec![false; n]; n];
            for (k, v, _) in &s.entries {
                if k == "sqrtdet" {
                    continue;
                }
                let (i, j) = parse_metric_key(k, n).expect("validated above");
                let e = s.parse_src(k, v, &base_ctx)?;
                if given[i][j] && !entries[i][j].equals(&e) {
                    return Err(ModelError::NotSymmetric(i, j));
                }
                if given[j][i] && !entries[j][i].equals(&e) {
                    return Err(ModelError::NotSymmetric(i, j));
                }
                entries[i][j] = e.clone();
                entries[j][i] = e;
                given[i][j] = true;
                given[j][i] = true;
            }
            let hint = s.parse_opt("sqrtdet", &base_ctx)?;
            Some(Metric::new(entries, hint, &base_ctx)?)
        }
        None => None,
    };

    let mut relations: Vec<(String, SideRelation)> = Vec::new();
    for s in all("relation") {
        s.check_keys(&["expr", "solve"], |_| false)?;
        let expr = s.parse("expr", &base_ctx)?;
        let solve = s.parse("solve", &base_ctx)?;
        let atom = solve.as_single_atom().ok_or_else(|| ModelError::Invalid {
            section: s.title(),
            msg: "`solve` must be a single derivative atom".into(),
        })?;
        relations.push((s.name.clone().unwrap(), SideRelation::new(&expr, atom, &base_ctx)?));
    }

    let mut exprs = Vec::new();
    for s in all("expr") {
        s.check_keys(&["expr", "chart"], |_| false)?;
        let (chart, ctx) = chart_of(s, &charts)?;
        exprs.push(ExprSpec {
            name: s.name.clone().unwrap(),
            chart,
            expr: s.parse("expr", &ctx)?,
        });
    }

    let mut equations = Vec::new();
    for s in all("equation") {
        s.check_keys(
            &["expr", "variational", "source", "leading", "relations", "chart"],
            |_| false,
        )?;
        let (chart, ctx) = chart_of(s, &charts)?;
        let delta = if s.get("variational") == Some("true") {
            if chart != "base" {
                return Err(ModelError::Invalid {
                    section: s.title(),
                    msg: "variational equations live on the base chart".into(),
                });
            }
            let m = metric.as_ref().ok_or_else(|| ModelError::Invalid {
                section: s.title(),
                msg: "variational equation needs a [metric]".into(),
            })?;
            let source = s.parse("source", &ctx)?;
            m.variational_equation(&source, &ctx)
        } else {
            s.parse("expr", &ctx)?
        };
        let leading = match s.parse_opt("leading", &ctx)? {
            Some(e) => Some(e.as_single_atom().ok_or_else(|| ModelError::Invalid {
                section: s.title(),
                msg: "`leading` must be a single jet atom".into(),
            })?),
            None => None,
        };
        let mut rels = Vec::new();
        if let Some(list) = s.get("relations") {
            for name in list.split_whitespace() {
                let r = relations
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, r)| r.clone())
                    .ok_or_else(|| ModelError::UnknownName {
                        section: s.title(),
                        kind: "relation",
                        name: name.to_string(),
                    })?;
                rels.push(r);
            }
        }
        equations.push(EquationSpec {
            name: s.name.clone().unwrap(),
            chart,
            pde: Pde::new(delta, leading, rels, &ctx)?,
        });
    }
    let require_equation = |s: &RawSection, name: &str| -> Result<String, ModelError> {
        if equations.iter().any(|e| e.name == name) {
            Ok(name.to_string())
        } else {
            Err(ModelError::UnknownName {
                section: s.title(),
                kind: "equation",
                name: name.to_string(),
            })
        }
    };

    let mut generators = Vec::new();
    for s in all("generator") {
        let (chart, ctx) = chart_of(s, &charts)?;
        let fixed = ["case", "chart", "equation", "lagrangian", "density"];
        s.check_keys(&fixed, |k| {
            ctx.is_coord(k)
                || k == ctx.field()
                || k.strip_prefix("gauge_").is_some_and(|c| ctx.is_coord(c))
        })?;
        let mut xi = BTreeMap::new();
        for c in ctx.coords() {
            if let Some(e) = s.parse_opt(c, &ctx)? {
                xi.insert(c.clone(), e);
            }
        }
        // the component along the dependent field is keyed by its name
        let phi = s.parse_opt(ctx.field(), &ctx)?.unwrap_or_else(Expr::zero);
        let mut gauges: Option<BTreeMap<String, Expr>> = None;
        for c in ctx.coords() {
            let key = format!("gauge_{c}");
            if let Some(e) = s.parse_opt(&key, &ctx)? {
                gauges.get_or_insert_with(BTreeMap::new).insert(c.clone(), e);
            }
        }
        let equation = match s.get("equation") {
            Some(n) => Some(require_equation(s, n)?),
            None => None,
        };
        generators.push(GeneratorSpec {
            name: s.name.clone().unwrap(),
            case: s.get("case").map(str::to_string),
            chart,
            field: VectorField::new(xi, phi, &ctx)?,
            equation,
            lagrangian: s.get("lagrangian").map(str::to_string),
            density: s.parse_opt("density", &ctx)?,
            gauges,
        });
    }
    for g in &generators {
        if let Some(l) = &g.lagrangian {
            if !exprs.iter().any(|e| &e.name == l) {
                return Err(ModelError::UnknownName {
                    section: format!("generator {}", g.name),
                    kind: "expr",
                    name: l.clone(),
                });
            }
        }
    }

    let mut fluxes = Vec::new();
    for s in all("flux") {
        let (chart, ctx) = chart_of(s, &charts)?;
        let fixed = ["case", "chart", "equation", "operator", "orientation"];
        s.check_keys(&fixed, |k| ctx.is_coord(k))?;
        let mut components = BTreeMap::new();
        for c in ctx.coords() {
            if let Some(e) = s.parse_opt(c, &ctx)? {
                components.insert(c.clone(), e);
            }
        }
        let orientation: Vec<String> = match s.get("orientation") {
            Some(o) => {
                let os: Vec<String> = o.split_whitespace().map(str::to_string).collect();
                for c in &os {
                    if !ctx.is_coord(c) {
                        return Err(ModelError::Invalid {
                            section: s.title(),
                            msg: format!("orientation name `{c}` is not a coordinate"),
                        });
                    }
                }
                os
            }
            None => Vec::new(),
        };
        let equation = require_equation(s, s.require("equation")?)?;
        fluxes.push(FluxSpec {
            name: s.name.clone().unwrap(),
            case: s.get("case").map(str::to_string),
            chart,
            flux: Flux::new(components),
            orientation,
            equation,
            operator: s.get("operator").map(str::to_string),
        });
    }

    let mut multipliers = Vec::new();
    for s in all("multiplier") {
        s.check_keys(&["case", "q", "equation", "density"], |_| false)?;
        let equation = require_equation(s, s.require("equation")?)?;
        let spec = equations.iter().find(|e| e.name == equation).unwrap();
        let ctx = charts
            .iter()
            .find(|(n, _)| *n == spec.chart)
            .map(|(_, c)| c.clone())
            .unwrap();
        multipliers.push(MultiplierSpec {
            name: s.name.clone().unwrap(),
            case: s.get("case").map(str::to_string),
            q: s.parse("q", &ctx)?,
            equation,
            density: s.parse_opt("density", &ctx)?,
        });
    }

    let mut maps = Vec::new();
    for s in all("map") {
        let to_name = s.require("to")?.to_string();
        let from_name = s.get("from").unwrap_or("base").to_string();
        let from_ctx = charts
            .iter()
            .find(|(n, _)| *n == from_name)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| ModelError::UnknownName {
                section: s.title(),
                kind: "chart",
                name: from_name.clone(),
            })?;
        let to_ctx = charts
            .iter()
            .find(|(n, _)| *n == to_name)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| ModelError::UnknownName {
                section: s.title(),
                kind: "chart",
                name: to_name.clone(),
            })?;
        let fixed = ["from", "to", "generator", "factor", "chart"];
        s.check_keys(&fixed, |k| {
            to_ctx.is_coord(k) || k.strip_prefix("inv_").is_some_and(|c| from_ctx.is_coord(c))
        })?;
        let mut defs = Vec::new();
        for c in to_ctx.coords() {
            defs.push((c.clone(), s.parse(c, &from_ctx)?));
        }
        let factor = s.parse_opt("factor", &from_ctx)?.unwrap_or_else(Expr::one);
        // inverse substitutions may mention both charts while they unwind
        let mut union: Vec<&str> = from_ctx.coords().iter().map(String::as_str).collect();
        for c in to_ctx.coords() {
            if !from_ctx.is_coord(c) {
                union.push(c);
            }
        }
        let mut union_ctx = Context::new(&union, from_ctx.field())
            .with_params(&param_refs)
            .with_radical(radical);
        for f in &funcs {
            union_ctx = union_ctx.with_ufunc(&f.name, f.arity, f.alias.as_deref());
        }
        let mut inverses = Vec::new();
        for (k, v, _) in &s.entries {
            if let Some(old) = k.strip_prefix("inv_") {
                inverses.push((old.to_string(), s.parse_src(k, v, &union_ctx)?));
            }
        }
        let generator = match s.get("generator") {
            Some(g) => {
                if !generators.iter().any(|gs| gs.name == g) {
                    return Err(ModelError::UnknownName {
                        section: s.title(),
                        kind: "generator",
                        name: g.to_string(),
                    });
                }
                Some(g.to_string())
            }
            None => None,
        };
        maps.push(MapSpec {
            name: s.name.clone().unwrap(),
            from: from_name,
            to: to_name,
            generator,
            map: VariableMap { defs, factor, inverses },
        });
    }

    Ok(Model {
        charts,
        metric,
        relations,
        exprs,
        equations,
        generators,
        fluxes,
        multipliers,
        maps,
    })
}

fn parse_metric_key(key: &str, n: usize) -> Option<(usize, usize)> {
    let rest = key.strip_prefix("g[")?;
    let (i, rest) = rest.split_once("][")?;
    let j = rest.strip_suffix(']')?;
    let i: usize = i.parse().ok()?;
    let j: usize = j.parse().ok()?;
    if i < n && j < n {
        Some((i, j))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
# flat string with a drift term
[coords]
x t

[field]
u

[params]
c

[metric]
g[0][0] = "-1"
g[1][1] = "1"

[equation main]
expr = "u_tt - u_xx"
leading = "u_tt"

[generator boost]
case = "i"
equation = "main"
x = "t"
t = "x"

[multiplier energy]
q = "u_t"
equation = "main"

[chart half]
coords = "x"

[map drop]
to = "half"
generator = "boost"
x = "x - c*t"
inv_t = "0"
"#;

    #[test]
    fn parses_every_section_kind() {
        let m = parse_model(SMALL).unwrap();
        assert_eq!(m.base().coords(), &["x".to_string(), "t".to_string()]);
        assert!(m.metric.is_some());
        assert_eq!(m.equations.len(), 1);
        assert_eq!(m.generators.len(), 1);
        assert_eq!(m.multipliers.len(), 1);
        let map = m.map_for_generator("boost").unwrap();
        assert_eq!(map.to, "half");
        assert_eq!(map.map.defs.len(), 1);
        let g = m.generator("boost").unwrap();
        assert!(g.field.xi("x").equals(&Expr::coord("t")));
    }

    #[test]
    fn asymmetric_metric_is_rejected() {
        let doc = r#"
[coords]
x t
[field]
u
[metric]
g[0][1] = "1"
g[1][0] = "2"
"#;
        let err = parse_model(doc).unwrap_err();
        assert!(err.to_string().contains("metric not symmetric"));
    }

    #[test]
    fn duplicate_sections_are_rejected() {
        let doc = "[coords]\nx\n[coords]\ny\n[field]\nu\n";
        let err = parse_model(doc).unwrap_err();
        assert!(matches!(err, ModelError::DuplicateSection { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = "[coords]\nx\n[field]\nu\n[equation e]\nexpr = \"u_x\"\nfrobnicate = \"1\"\n";
        let err = parse_model(doc).unwrap_err();
        assert!(matches!(err, ModelError::UnknownKey { .. }));
    }

    #[test]
    fn unquoted_values_are_syntax_errors() {
        let doc = "[coords]\nx\n[field]\nu\n[equation e]\nexpr = u_x\n";
        let err = parse_model(doc).unwrap_err();
        assert!(matches!(err, ModelError::Syntax { .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let doc = "# top\n[coords]\nx # tail comment\n\n[field]\nu\n";
        let m = parse_model(doc).unwrap();
        assert_eq!(m.base().coords().len(), 1);
    }

    #[test]
    fn missing_equation_reference_is_flagged() {
        let doc = "[coords]\nx\n[field]\nu\n[multiplier q]\nq = \"u_x\"\nequation = \"nope\"\n";
        let err = parse_model(doc).unwrap_err();
        assert!(matches!(err, ModelError::UnknownName { kind: "equation", .. }));
    }
}
