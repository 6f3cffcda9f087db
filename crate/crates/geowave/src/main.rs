use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use geowave::conservation::{
    divergence_on_shell, multiplier_check, noether_flux, variational_test, DensityMatch, Flux,
};
use geowave::context::Context;
use geowave::expr::{Expr, Monomial, Poly};
use geowave::geometry::{compare_up_to_unit, field_split};
use geowave::model::{parse_model, EquationSpec, Model};
use geowave::oracle::{self, Oracle, Verdict, Witness};
use geowave::parse::parse_expr;
use geowave::reduction::{change_variables, invariants, ReductionError, VariableMap};
use geowave::scalar::QdScalar;
use geowave::symmetry::{
    check_symmetry, commutator, lie_determining_system, noether_determining_system, VectorField,
};

#[derive(Parser)]
#[command(
    name = "geowave",
    version,
    about = "Wave operators, point symmetries and conservation laws over model files"
)]
struct Cli {
    /// model file describing charts, equations, generators and currents
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// seed for the numeric confirmation oracle
    #[arg(long, default_value_t = oracle::DEFAULT_SEED)]
    seed: u64,
    /// decimal digits of working precision for numeric confirmation
    #[arg(long, default_value_t = oracle::DEFAULT_DIGITS)]
    digits: u32,
    /// sample points per numeric confirmation
    #[arg(long, default_value_t = oracle::DEFAULT_TRIALS)]
    trials: u32,
    /// write one JSON record per check to this file
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble the wave equation from the model metric
    Box {
        /// source term, parsed on the base chart
        #[arg(long, default_value = "0")]
        source: String,
        /// named equation to compare against, up to a unit factor
        #[arg(long, value_name = "NAME")]
        compare: Option<String>,
    },
    /// Run one family of recorded checks
    #[command(group(
        ArgGroup::new("what")
            .required(true)
            .args(["symmetries", "noether", "fluxes", "multipliers"])
    ))]
    Check {
        /// point-symmetry condition for each generator tied to an equation
        #[arg(long)]
        symmetries: bool,
        /// variational condition and density comparison for each generator tied to a lagrangian
        #[arg(long)]
        noether: bool,
        /// on-shell divergence of each recorded current
        #[arg(long)]
        fluxes: bool,
        /// multiplier condition for each recorded multiplier
        #[arg(long)]
        multipliers: bool,
        /// restrict to records with this case label
        #[arg(long)]
        case: Option<String>,
    },
    /// Print the determining system of an equation or a lagrangian
    Detsys {
        #[arg(long, value_enum, default_value_t = Mode::Lie)]
        mode: Mode,
        /// equation to analyse (defaults to the only one in the model)
        #[arg(long, value_name = "NAME")]
        equation: Option<String>,
        /// lagrangian for the variational mode
        #[arg(long, default_value = "L", value_name = "NAME")]
        lagrangian: String,
    },
    /// Rewrite an equation in invariant variables
    Reduce {
        /// recorded map(s) to apply in order
        #[arg(long, value_name = "NAME")]
        map: Vec<String>,
        /// generator whose invariants define the new chart
        #[arg(long, value_name = "NAME")]
        generator: Option<String>,
        /// equation to reduce (defaults to the only one in the model)
        #[arg(long, value_name = "NAME")]
        equation: Option<String>,
        /// named equation to compare the final result with, up to a unit
        #[arg(long, value_name = "NAME")]
        compare: Option<String>,
    },
    /// Commutator table of the recorded generators
    Commutators {
        /// restrict to generators with this case label
        #[arg(long)]
        case: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// point-symmetry condition of an equation
    Lie,
    /// variational condition of a lagrangian, with gauge terms
    Noether,
}

type CliError = Box<dyn Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let text = fs::read_to_string(&cli.model)
        .map_err(|e| format!("cannot read {}: {e}", cli.model.display()))?;
    let model = parse_model(&text)?;
    let oracle = Oracle::new(cli.seed, cli.digits, cli.trials);
    let mut session = Session::default();
    match &cli.command {
        Cmd::Box { source, compare } => {
            cmd_box(&model, &oracle, &mut session, source, compare.as_deref())?
        }
        Cmd::Check { symmetries, noether, fluxes, multipliers, case } => {
            let case = case.as_deref();
            if *symmetries {
                check_symmetries(&model, &oracle, &mut session, case)?;
            } else if *noether {
                check_noether(&model, &oracle, &mut session, case)?;
            } else if *fluxes {
                check_fluxes(&model, &oracle, &mut session, case)?;
            } else if *multipliers {
                check_multipliers(&model, &oracle, &mut session, case)?;
            }
        }
        Cmd::Detsys { mode, equation, lagrangian } => {
            cmd_detsys(&model, &mut session, *mode, equation.as_deref(), lagrangian)?
        }
        Cmd::Reduce { map, generator, equation, compare } => cmd_reduce(
            &model,
            &oracle,
            &mut session,
            map,
            generator.as_deref(),
            equation.as_deref(),
            compare.as_deref(),
        )?,
        Cmd::Commutators { case } => cmd_commutators(&model, &mut session, case.as_deref())?,
    }
    if session.records.is_empty() {
        return Err("nothing matched the request; check the names and case labels".into());
    }
    if let Some(path) = &cli.json {
        session.write_json(path)?;
    }
    Ok(session.all_hold())
}

// ---------------------------------------------------------------- records

struct Record {
    command: &'static str,
    target: String,
    holds: bool,
    note: String,
    residual: Option<String>,
    witness: Option<Value>,
    millis: u128,
}

#[derive(Default)]
struct Session {
    records: Vec<Record>,
}

const CLIP: usize = 2000;

fn clip(s: &str) -> String {
    if s.len() <= CLIP {
        return s.to_string();
    }
    let mut cut = CLIP;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}... [{} chars total]", &s[..cut], s.len())
}

impl Session {
    fn push(&mut self, rec: Record) {
        let status = if rec.holds { "[PASS]" } else { "[FAIL]" };
        println!(
            "{status} {} {} ({} ms) {}",
            rec.command,
            rec.target,
            rec.millis,
            clip(&rec.note)
        );
        if !rec.holds {
            if let Some(r) = &rec.residual {
                println!("        residual: {}", clip(r));
            }
            if let Some(Value::Array(points)) = &rec.witness {
                if let Some(Value::Object(first)) = points.first() {
                    if let Some(Value::String(v)) = first.get("value") {
                        println!("        witness value at first sample: {v}");
                    }
                }
            }
        }
        self.records.push(rec);
    }

    fn all_hold(&self) -> bool {
        self.records.iter().all(|r| r.holds)
    }

    fn write_json(&self, path: &Path) -> Result<(), CliError> {
        let mut out = String::new();
        for r in &self.records {
            let v = json!({
                "command": r.command,
                "target": r.target,
                "holds": r.holds,
                "note": r.note,
                "residual": r.residual,
                "witness": r.witness.clone().unwrap_or(Value::Null),
                "timing": Value::Null,
            });
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn witness_json(w: &Witness) -> Value {
    Value::Array(
        w.points
            .iter()
            .map(|p| json!({ "assignments": p.assignments, "value": p.value }))
            .collect(),
    )
}

fn verdict_record(
    command: &'static str,
    target: String,
    verdict: &Verdict,
    ok_note: String,
    millis: u128,
) -> Record {
    match verdict {
        Verdict::Holds => Record {
            command,
            target,
            holds: true,
            note: ok_note,
            residual: None,
            witness: None,
            millis,
        },
        Verdict::Fails { residual, witness } => Record {
            command,
            target,
            holds: false,
            note: "residual is nonzero at sampled points".into(),
            residual: Some(residual.to_string()),
            witness: Some(witness_json(witness)),
            millis,
        },
        Verdict::Inconsistent { residual } => Record {
            command,
            target,
            holds: false,
            note: "symbolic residual did not cancel but vanishes numerically; unproven".into(),
            residual: Some(residual.to_string()),
            witness: None,
            millis,
        },
    }
}

// ---------------------------------------------------------------- helpers

fn find_equation<'m>(model: &'m Model, name: &str) -> Result<&'m EquationSpec, CliError> {
    model
        .equation(name)
        .ok_or_else(|| format!("no [equation {name}] in the model").into())
}

fn default_equation<'m>(
    model: &'m Model,
    given: Option<&str>,
) -> Result<&'m EquationSpec, CliError> {
    match given {
        Some(n) => find_equation(model, n),
        None if model.equations.len() == 1 => Ok(&model.equations[0]),
        None => Err(format!(
            "--equation required: the model records {} equations",
            model.equations.len()
        )
        .into()),
    }
}

fn chart_ctx<'m>(model: &'m Model, chart: &str) -> &'m Context {
    model.context(chart).expect("chart names are validated when the model is parsed")
}

fn case_matches(spec_case: &Option<String>, filter: Option<&str>) -> bool {
    match filter {
        None => true,
        Some(f) => spec_case.as_deref() == Some(f),
    }
}

fn density_coordinate(ctx: &Context) -> &str {
    if ctx.coords().iter().any(|c| c == "t") {
        "t"
    } else {
        &ctx.coords()[0]
    }
}

fn render_monomial(m: &Monomial) -> String {
    Expr::from_poly(Poly::from_term(m.clone(), QdScalar::one())).to_string()
}

fn render_field(v: &VectorField, ctx: &Context) -> String {
    let mut parts: Vec<String> = Vec::new();
    for (c, e) in v.components() {
        parts.push(format!("({e}) d_{c}"));
    }
    if !v.phi().is_zero() {
        parts.push(format!("({}) d_{}", v.phi(), ctx.field()));
    }
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

fn coeff_of(split: &BTreeMap<Monomial, Poly>, den: &Poly, m: &Monomial) -> String {
    match split.get(m) {
        None => "0".into(),
        Some(p) => Expr::from_poly(p.clone())
            .div(&Expr::from_poly(den.clone()))
            .map(|e| e.to_string())
            .unwrap_or_else(|_| p.to_string()),
    }
}

/// Comparison record shared by `box --compare` and `reduce --compare`: a
/// clean unit is a pass; otherwise every disagreeing field monomial is
/// listed with both coefficients, so a single broken term stays visible
/// inside an otherwise matching equation.
fn comparison_record(
    command: &'static str,
    target: String,
    computed: &Expr,
    quoted: &Expr,
    quoted_name: &str,
    hints: &[Poly],
    ctx: &Context,
    oracle: &Oracle,
    millis: u128,
) -> Result<Record, CliError> {
    let cmp = compare_up_to_unit(computed, quoted);
    if cmp.matches() {
        let lambda = cmp
            .lambda
            .expect("matching comparison carries its unit")
            .cancel(hints)
            .reduced();
        return Ok(Record {
            command,
            target,
            holds: true,
            note: format!("matches {quoted_name} with unit {lambda}"),
            residual: None,
            witness: None,
            millis,
        });
    }
    let sa = field_split(computed);
    let sb = field_split(quoted);
    let mut details = Vec::new();
    for m in &cmp.mismatched {
        details.push(format!(
            "coefficient of {}: constructed {} vs quoted {}",
            render_monomial(m),
            coeff_of(&sa, computed.den(), m),
            coeff_of(&sb, quoted.den(), m),
        ));
    }
    let mut witness = None;
    if let Some(lam) = &cmp.lambda {
        let diff = computed.sub(&lam.mul(quoted));
        if let Verdict::Fails { witness: w, .. } = oracle.confirm(&diff, ctx)? {
            witness = Some(witness_json(&w));
        }
    }
    let note = match &cmp.lambda {
        Some(lam) => format!(
            "{} field monomial(s) disagree with {} (majority ratio {})",
            cmp.mismatched.len(),
            quoted_name,
            lam.cancel(hints).reduced()
        ),
        None => format!(
            "{} field monomial(s) disagree with {}",
            cmp.mismatched.len(),
            quoted_name
        ),
    };
    Ok(Record {
        command,
        target,
        holds: false,
        note,
        residual: Some(details.join("\n")),
        witness,
        millis,
    })
}

// ------------------------------------------------------------- subcommands

fn cmd_box(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    source: &str,
    compare: Option<&str>,
) -> Result<(), CliError> {
    let metric = model.metric.as_ref().ok_or("the model has no [metric] section")?;
    let ctx = model.base();
    let src = parse_expr(source, ctx)?;
    let t0 = Instant::now();
    let computed = metric.box_equation(&src, ctx)?;
    let millis = t0.elapsed().as_millis();
    match compare {
        None => session.push(Record {
            command: "box",
            target: "equation".into(),
            holds: true,
            note: format!("{computed} = 0"),
            residual: None,
            witness: None,
            millis,
        }),
        Some(name) => {
            let spec = find_equation(model, name)?;
            let qctx = chart_ctx(model, &spec.chart);
            if qctx.coords() != ctx.coords() {
                return Err(format!(
                    "equation {name} lives on chart ({}), not the base chart",
                    qctx.coords().join(", ")
                )
                .into());
            }
            let t0 = Instant::now();
            let rec = comparison_record(
                "box",
                name.to_string(),
                &computed,
                &spec.pde.delta,
                name,
                metric.cancel_hints(),
                ctx,
                oracle,
                millis + t0.elapsed().as_millis(),
            )?;
            session.push(rec);
        }
    }
    Ok(())
}

fn check_symmetries(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    case: Option<&str>,
) -> Result<(), CliError> {
    for g in &model.generators {
        if !case_matches(&g.case, case) || g.lagrangian.is_some() {
            continue;
        }
        let Some(eqname) = &g.equation else { continue };
        let eq = find_equation(model, eqname)?;
        if eq.chart != g.chart {
            return Err(format!(
                "generator {} is on chart {} but equation {} is on chart {}",
                g.name, g.chart, eqname, eq.chart
            )
            .into());
        }
        let ctx = chart_ctx(model, &g.chart);
        let t0 = Instant::now();
        let verdict = check_symmetry(&g.field, &eq.pde, ctx, oracle)?;
        session.push(verdict_record(
            "check-symmetries",
            g.name.clone(),
            &verdict,
            format!("prolonged action vanishes on solutions of {eqname}"),
            t0.elapsed().as_millis(),
        ));
    }
    Ok(())
}

fn check_noether(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    case: Option<&str>,
) -> Result<(), CliError> {
    for g in &model.generators {
        if !case_matches(&g.case, case) {
            continue;
        }
        let Some(lname) = &g.lagrangian else { continue };
        let l = model
            .named_expr(lname)
            .ok_or_else(|| format!("no [expr {lname}] in the model"))?;
        if l.chart != g.chart {
            return Err(format!(
                "generator {} is on chart {} but {} is on chart {}",
                g.name, g.chart, lname, l.chart
            )
            .into());
        }
        let ctx = chart_ctx(model, &g.chart);
        let t0 = Instant::now();
        let residual = variational_test(&g.field, &l.expr, ctx)?;
        let verdict = oracle.confirm(&residual, ctx)?;
        session.push(verdict_record(
            "check-noether",
            g.name.clone(),
            &verdict,
            format!("variational condition on {lname} holds (gauge-insensitive test)"),
            t0.elapsed().as_millis(),
        ));
        if let Some(density) = &g.density {
            let eqname = g.equation.as_ref().ok_or_else(|| {
                format!("generator {} records a density but no equation", g.name)
            })?;
            let eq = find_equation(model, eqname)?;
            let t0 = Instant::now();
            let flux = noether_flux(&g.field, &l.expr, g.gauges.as_ref(), ctx);
            let coord = density_coordinate(ctx);
            let constructed = flux.component(coord);
            let outcome =
                geowave::conservation::compare_density(&constructed, density, &eq.pde, ctx, oracle)?;
            let millis = t0.elapsed().as_millis();
            let rec = match outcome {
                DensityMatch::Proportional { lambda, exact } => Record {
                    command: "check-noether",
                    target: format!("{}.density", g.name),
                    holds: true,
                    note: if exact {
                        format!("constructed {coord}-density matches the recorded one, ratio {lambda}")
                    } else {
                        format!(
                            "constructed {coord}-density matches the recorded one, ratio {lambda}, \
                             up to terms vanishing on solutions of {eqname}"
                        )
                    },
                    residual: None,
                    witness: None,
                    millis,
                },
                DensityMatch::Mismatch { residual, witness } => Record {
                    command: "check-noether",
                    target: format!("{}.density", g.name),
                    holds: false,
                    note: format!("constructed {coord}-density differs from the recorded one"),
                    residual: Some(residual.to_string()),
                    witness: Some(witness_json(&witness)),
                    millis,
                },
            };
            session.push(rec);
        }
    }
    Ok(())
}

fn check_fluxes(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    case: Option<&str>,
) -> Result<(), CliError> {
    for f in &model.fluxes {
        if !case_matches(&f.case, case) {
            continue;
        }
        let eq = find_equation(model, &f.equation)?;
        if eq.chart != f.chart {
            return Err(format!(
                "current {} is on chart {} but equation {} is on chart {}",
                f.name, f.chart, f.equation, eq.chart
            )
            .into());
        }
        let ctx = chart_ctx(model, &f.chart);
        let t0 = Instant::now();
        let verdict = oracle.confirm(&divergence_on_shell(&f.flux, &eq.pde, ctx)?, ctx)?;
        let ok_note = match &f.operator {
            Some(op) => format!("divergence vanishes on solutions of {} (current of {op})", f.equation),
            None => format!("divergence vanishes on solutions of {}", f.equation),
        };
        let failed = !verdict.holds();
        session.push(verdict_record(
            "check-fluxes",
            f.name.clone(),
            &verdict,
            ok_note,
            t0.elapsed().as_millis(),
        ));
        if failed && !f.orientation.is_empty() {
            let mut comps = f.flux.components.clone();
            for c in &f.orientation {
                if let Some(e) = comps.get_mut(c) {
                    *e = e.neg();
                }
            }
            let oriented = Flux::new(comps);
            let t0 = Instant::now();
            let verdict = oracle.confirm(&divergence_on_shell(&oriented, &eq.pde, ctx)?, ctx)?;
            session.push(verdict_record(
                "check-fluxes",
                format!("{}.oriented", f.name),
                &verdict,
                format!(
                    "divergence vanishes after negating the {} component(s)",
                    f.orientation.join(", ")
                ),
                t0.elapsed().as_millis(),
            ));
        }
    }
    Ok(())
}

fn check_multipliers(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    case: Option<&str>,
) -> Result<(), CliError> {
    for m in &model.multipliers {
        if !case_matches(&m.case, case) {
            continue;
        }
        let eq = find_equation(model, &m.equation)?;
        let ctx = chart_ctx(model, &eq.chart);
        let t0 = Instant::now();
        let verdict = multiplier_check(&m.q, &eq.pde.delta, ctx, oracle)?;
        session.push(verdict_record(
            "check-multipliers",
            m.name.clone(),
            &verdict,
            format!("variational derivative of q * {} vanishes identically", m.equation),
            t0.elapsed().as_millis(),
        ));
        if let Some(d) = &m.density {
            session.push(Record {
                command: "check-multipliers",
                target: format!("{}.density", m.name),
                holds: true,
                note: format!("recorded density (informational, no full current to pair): {d}"),
                residual: None,
                witness: None,
                millis: 0,
            });
        }
    }
    Ok(())
}

fn cmd_detsys(
    model: &Model,
    session: &mut Session,
    mode: Mode,
    equation: Option<&str>,
    lagrangian: &str,
) -> Result<(), CliError> {
    let t0 = Instant::now();
    let ds = match mode {
        Mode::Lie => {
            let eq = default_equation(model, equation)?;
            let ctx = chart_ctx(model, &eq.chart);
            lie_determining_system(&eq.pde, ctx)?.0
        }
        Mode::Noether => {
            let l = model.named_expr(lagrangian).ok_or_else(|| {
                format!("no [expr {lagrangian}] in the model to use as the lagrangian")
            })?;
            let ctx = chart_ctx(model, &l.chart);
            noether_determining_system(&l.expr, ctx)?.0
        }
    };
    let millis = t0.elapsed().as_millis();
    for (mon, row) in &ds.rows {
        session.push(Record {
            command: "detsys",
            target: render_monomial(mon),
            holds: true,
            note: format!("{row} = 0"),
            residual: None,
            witness: None,
            millis: 0,
        });
    }
    let leftover = ds.reconstruct().sub(&ds.residual);
    session.push(Record {
        command: "detsys",
        target: "reconstruction".into(),
        holds: leftover.is_zero(),
        note: format!("{} rows reassemble to the full residual", ds.rows.len()),
        residual: if leftover.is_zero() { None } else { Some(leftover.to_string()) },
        witness: None,
        millis,
    });
    Ok(())
}

struct StepPlan {
    label: String,
    from: Option<String>,
    vm: VariableMap,
    nctx: Context,
}

fn cmd_reduce(
    model: &Model,
    oracle: &Oracle,
    session: &mut Session,
    maps: &[String],
    generator: Option<&str>,
    equation: Option<&str>,
    compare: Option<&str>,
) -> Result<(), CliError> {
    let eq = default_equation(model, equation)?;
    let mut chart = eq.chart.clone();
    let mut ctx = chart_ctx(model, &chart).clone();
    let mut delta = eq.pde.delta.clone();

    let steps: Vec<StepPlan> = if !maps.is_empty() {
        let mut plans = Vec::new();
        for name in maps {
            let ms = model
                .map_spec(name)
                .ok_or_else(|| format!("no [map {name}] in the model"))?;
            plans.push(StepPlan {
                label: ms.name.clone(),
                from: Some(ms.from.clone()),
                vm: ms.map.clone(),
                nctx: chart_ctx(model, &ms.to).clone(),
            });
        }
        plans
    } else if let Some(gname) = generator {
        match model.map_for_generator(gname) {
            Some(ms) => vec![StepPlan {
                label: ms.name.clone(),
                from: Some(ms.from.clone()),
                vm: ms.map.clone(),
                nctx: chart_ctx(model, &ms.to).clone(),
            }],
            None => {
                let g = model
                    .generator(gname)
                    .ok_or_else(|| format!("no [generator {gname}] in the model"))?;
                if g.chart != chart {
                    return Err(format!(
                        "generator {gname} is on chart {}, the equation on {chart}",
                        g.chart
                    )
                    .into());
                }
                match invariants(&g.field, &ctx) {
                    Ok((vm, nctx)) => vec![StepPlan {
                        label: format!("invariants({gname})"),
                        from: None,
                        vm,
                        nctx,
                    }],
                    Err(ReductionError::SupplyManually) => {
                        return Err(format!(
                            "no recorded map for {gname} and it is not a plain scaling or \
                             translation; supply invariants manually with --map"
                        )
                        .into())
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    } else {
        return Err("reduce needs --map or --generator".into());
    };

    for step in steps {
        if let Some(from) = &step.from {
            if from != &chart {
                return Err(format!(
                    "map {} starts from chart {from}, but the equation is on {chart}",
                    step.label
                )
                .into());
            }
        }
        let t0 = Instant::now();
        delta = change_variables(&delta, &step.vm, &ctx, &step.nctx)?;
        let millis = t0.elapsed().as_millis();
        ctx = step.nctx;
        chart = step.label.clone();
        session.push(Record {
            command: "reduce",
            target: step.label,
            holds: true,
            note: format!("{delta} = 0 on chart ({})", ctx.coords().join(", ")),
            residual: None,
            witness: None,
            millis,
        });
    }

    if let Some(cname) = compare {
        let spec = find_equation(model, cname)?;
        let qctx = chart_ctx(model, &spec.chart);
        if qctx.coords() != ctx.coords() {
            return Err(format!(
                "equation {cname} lives on chart ({}), the reduced equation on ({})",
                qctx.coords().join(", "),
                ctx.coords().join(", ")
            )
            .into());
        }
        let t0 = Instant::now();
        let rec = comparison_record(
            "reduce",
            format!("compare:{cname}"),
            &delta,
            &spec.pde.delta,
            cname,
            &[],
            &ctx,
            oracle,
            t0.elapsed().as_millis(),
        )?;
        session.push(rec);
    }
    Ok(())
}

fn cmd_commutators(
    model: &Model,
    session: &mut Session,
    case: Option<&str>,
) -> Result<(), CliError> {
    let gens: Vec<_> = model
        .generators
        .iter()
        .filter(|g| case_matches(&g.case, case))
        .collect();
    for (i, a) in gens.iter().enumerate() {
        for b in gens.iter().skip(i + 1) {
            if a.chart != b.chart {
                continue;
            }
            let ctx = chart_ctx(model, &a.chart);
            let t0 = Instant::now();
            let c = commutator(&a.field, &b.field, ctx);
            let note = if c.is_zero() { "0".to_string() } else { render_field(&c, ctx) };
            session.push(Record {
                command: "commutators",
                target: format!("[{}, {}]", a.name, b.name),
                holds: true,
                note,
                residual: None,
                witness: None,
                millis: t0.elapsed().as_millis(),
            });
        }
    }
    Ok(())
}
