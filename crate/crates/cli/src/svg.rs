//! Self-contained SVG 1.1 plots: the fold diagram and spectrum scatter.
//!
//! Coordinates are printed with fixed precision so that identical data give
//! byte-identical files.

use std::fmt::Write;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 280.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    /// Drawn as polylines.
    pub lines: Vec<Series>,
    /// Drawn as dots.
    pub dots: Vec<Series>,
    pub markers: Vec<(f64, f64)>,
}

/// Rendered document plus warnings about skipped series.
pub struct Plot {
    pub svg: String,
    pub warnings: Vec<String>,
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.lines.iter().chain(&panel.dots).flat_map(|s| s.points.iter()).chain(&panel.markers);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let w = hi - lo;
        if w <= 1e-300 {
            let d = lo.abs().max(1.0) * 0.5;
            (lo - d, hi + d)
        } else {
            (lo - 0.05 * w, hi + 0.05 * w)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn valid(series: &Series, warnings: &mut Vec<String>) -> bool {
    if series.points.is_empty() {
        warnings.push(format!("series '{}' is empty; skipped", series.label));
        return false;
    }
    if series.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        warnings.push(format!("series '{}' has non-finite points; skipped", series.label));
        return false;
    }
    true
}

fn panel(out: &mut String, p: &Panel, ox: f64, warnings: &mut Vec<String>) {
    let lines: Vec<&Series> = p.lines.iter().filter(|s| valid(s, warnings)).collect();
    let dots: Vec<&Series> = p.dots.iter().filter(|s| valid(s, warnings)).collect();
    let shown = Panel {
        lines: lines.iter().map(|s| (*s).clone()).collect(),
        dots: dots.iter().map(|s| (*s).clone()).collect(),
        markers: p.markers.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
        ..Panel::default()
    };
    let (x0, x1, y0, y1) = bounds(&shown);
    let (left, top) = (ox + MARGIN, MARGIN);
    let (w, h) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;
    let _ = writeln!(
        out,
        r##"<g class="panel"><rect x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#000"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        left + w / 2.0,
        top - 15.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        left + w / 2.0,
        top + h + 35.0,
        escape(&p.xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        left - 38.0,
        top + h / 2.0,
        left - 38.0,
        top + h / 2.0,
        escape(&p.ylabel)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
            px(xv),
            top + h + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#,
            left - 4.0,
            py(yv) + 3.0,
            tick(yv)
        );
    }
    for (k, s) in lines.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.label),
            COLORS[k % COLORS.len()],
            pts.join(" ")
        );
    }
    for (k, s) in dots.iter().enumerate() {
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle class="dot" cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                px(x),
                py(y),
                COLORS[k % COLORS.len()]
            );
        }
    }
    for &(x, y) in &shown.markers {
        let _ = writeln!(
            out,
            r##"<circle class="marker" cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="#000" stroke-width="1.5"/>"##,
            px(x),
            py(y)
        );
    }
    out.push_str("</g>\n");
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Panels side by side.
pub fn render(title: &str, panels: &[Panel]) -> Plot {
    let mut warnings = Vec::new();
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    if panels.is_empty() {
        panel(&mut out, &Panel::default(), 0.0, &mut warnings);
    }
    for (k, p) in panels.iter().enumerate() {
        panel(&mut out, p, k as f64 * PANEL_W, &mut warnings);
    }
    out.push_str("</svg>\n");
    Plot { svg: out, warnings }
}

/// One point of a continuation branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchPoint {
    pub branch: usize,
    pub t: f64,
    pub u_norm: f64,
    pub eigen_abs: f64,
}

/// Parameter against `‖u‖` and against the smallest `|eigenvalue|`, one
/// polyline per branch. When a fold is given both branches are extended to
/// it so they meet at the marker.
pub fn fold_diagram(points: &[BranchPoint], fold: Option<BranchPoint>) -> Plot {
    let branches = points.iter().map(|p| p.branch + 1).max().unwrap_or(0);
    let mut norm = Panel {
        title: "branch norm".into(),
        xlabel: "t".into(),
        ylabel: "rms u".into(),
        ..Panel::default()
    };
    let mut eig = Panel {
        title: "smallest eigenvalue".into(),
        xlabel: "t".into(),
        ylabel: "|eigenvalue|".into(),
        ..Panel::default()
    };
    for b in 0..branches {
        let mut own: Vec<BranchPoint> = points.iter().copied().filter(|p| p.branch == b).collect();
        if let Some(f) = fold {
            if b == 0 {
                own.push(f);
            } else if b == 1 {
                own.insert(0, f);
            }
        }
        let label = format!("branch {b}");
        norm.lines.push(Series { label: label.clone(), points: own.iter().map(|p| (p.t, p.u_norm)).collect() });
        eig.lines.push(Series { label, points: own.iter().map(|p| (p.t, p.eigen_abs)).collect() });
    }
    if let Some(f) = fold {
        norm.markers.push((f.t, f.u_norm));
        eig.markers.push((f.t, f.eigen_abs));
    }
    render("fold diagram", &[norm, eig])
}

pub fn scatter(title: &str, xlabel: &str, ylabel: &str, values: &[(f64, f64)]) -> Plot {
    let p = Panel {
        title: title.into(),
        xlabel: xlabel.into(),
        ylabel: ylabel.into(),
        dots: vec![Series { label: title.into(), points: values.to_vec() }],
        ..Panel::default()
    };
    render(title, &[p])
}

/// Eigenvalues in the complex plane.
pub fn spectrum_scatter(title: &str, values: &[(f64, f64)]) -> Plot {
    scatter(title, "Re", "Im", values)
}
