use std::time::Instant;

use geowave::context::Context;
use geowave::geometry::Metric;
use geowave::parse::parse_expr;

fn kerr_ctx() -> Context {
    Context::new(&["t", "r", "theta", "phi"], "u")
        .with_params(&["M", "k"])
        .with_angular(&["theta"])
        .with_radical(7)
        .with_ufunc("k", 1, None)
        .with_ufunc("h", 1, None)
}

#[test]
fn profile_kerr_box() {
    let ctx = kerr_ctx();
    let rho2 = "(r^2 + k^2*cos(theta)^2)";
    let delta = "(r^2 - 2*M*r + k^2)";
    let entries_src = [
        [
            format!("({delta} - k^2*sin(theta)^2)/{rho2}"),
            String::new(),
            String::new(),
            format!("2*M*k*r*sin(theta)^2/{rho2}"),
        ],
        [String::new(), format!("-{rho2}/{delta}"), String::new(), String::new()],
        [String::new(), String::new(), format!("-{rho2}"), String::new()],
        [
            format!("2*M*k*r*sin(theta)^2/{rho2}"),
            String::new(),
            String::new(),
            format!(
                "-sin(theta)^2*((r^2 + k^2)^2 - {delta}*k^2*sin(theta)^2)/{rho2}"
            ),
        ],
    ];
    let mut entries = Vec::new();
    for row in &entries_src {
        let mut r = Vec::new();
        for cell in row {
            if cell.is_empty() {
                r.push(geowave::expr::Expr::zero());
            } else {
                r.push(parse_expr(cell, &ctx).unwrap());
            }
        }
        entries.push(r);
    }
    // symmetrize
    let e01 = entries[0][3].clone();
    entries[3][0] = e01;

    let t0 = Instant::now();
    let hint = parse_expr(&format!("{rho2}*sin(theta)"), &ctx).unwrap();
    let m = Metric::new(entries, Some(hint), &ctx).unwrap();
    eprintln!("metric+inverse: {:?}", t0.elapsed());
    eprintln!(
        "det terms: {}, inv[0][0] num/den terms: {}/{}",
        m.det.num().term_count(),
        m.inv[0][0].num().term_count(),
        m.inv[0][0].den().term_count()
    );

    let t1 = Instant::now();
    let sb = m.scaled_box(&ctx);
    eprintln!("scaled_box: {:?} (num {} / den {})", t1.elapsed(), sb.num().term_count(), sb.den().term_count());

    let t2 = Instant::now();
    let src = parse_expr("k(u)", &ctx).unwrap();
    let be = m.box_equation(&src, &ctx).unwrap();
    eprintln!("box_equation: {:?} (num {} / den {})", t2.elapsed(), be.num().term_count(), be.den().term_count());

    let t3 = Instant::now();
    let prim = be.num().equation_primitive_part();
    eprintln!("primitive: {:?} ({} terms)", t3.elapsed(), prim.term_count());
}
