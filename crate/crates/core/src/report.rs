//! Markdown comparison tables and SVG histogram overlays.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::evaluate::EvaluationReport;
use crate::metrics::PairedHistogram;

fn cell(r: &EvaluationReport, key: &str) -> String {
    match (r.mean.get(key), r.stderr.get(key)) {
        (Some(m), Some(s)) if r.n_runs > 1 => format!("{m:.4} ± {s:.4}"),
        (Some(m), _) => format!("{m:.4}"),
        _ => "absent".to_string(),
    }
}

/// One column per report, in the given order; one row per metric found in
/// any report.
pub fn render_markdown(reports: &[EvaluationReport]) -> String {
    let keys: BTreeSet<&String> = reports.iter().flat_map(|r| r.mean.keys()).collect();
    let mut s = String::new();
    s.push_str("# Evaluation summary\n\n");
    s.push_str("| metric |");
    for r in reports {
        let _ = write!(s, " {} |", r.label);
    }
    s.push_str("\n|---|");
    for _ in reports {
        s.push_str("---|");
    }
    s.push('\n');
    s.push_str("| runs |");
    for r in reports {
        let _ = write!(s, " {} |", r.n_runs);
    }
    s.push('\n');
    for k in keys {
        let _ = write!(s, "| {k} |");
        for r in reports {
            let _ = write!(s, " {} |", cell(r, k));
        }
        s.push('\n');
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 260.0;
const PAD: f64 = 36.0;

fn step_path(p: &[f64], ymax: f64) -> String {
    let n = p.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / n;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / ymax;
    let mut d = format!("M{:.2},{:.2}", PAD, H - PAD);
    for (i, &v) in p.iter().enumerate() {
        let x0 = PAD + bw * i as f64;
        let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", x0, y(v), x0 + bw, y(v));
    }
    let _ = write!(d, " L{:.2},{:.2}", W - PAD, H - PAD);
    d
}

/// Reference (blue) and generated (orange) normalized histograms.
pub fn render_histogram_svg(title: &str, h: &PairedHistogram) -> String {
    let ymax = h.p.iter().chain(&h.q).cloned().fold(0.0, f64::max).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
        step_path(&h.p, ymax)
    );
    let _ = writeln!(
        s,
        r##"<path d="{}" fill="none" stroke="#ff7f0e" stroke-width="1.5"/>"##,
        step_path(&h.q, ymax)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{:.1}" font-family="sans-serif" font-size="11">{:.3}</text>"#,
        H - 18.0,
        h.lo
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
        W - PAD,
        H - 18.0,
        h.hi
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="#1f77b4">reference</text>"##,
        W - PAD - 120.0,
        PAD
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="#ff7f0e">generated</text>"##,
        W - PAD - 120.0,
        PAD + 14.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
