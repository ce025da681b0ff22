//! Self-contained SVG line charts from CSV columns.

use std::fmt::Write as _;

use crate::error::{domain, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Numeric `(x, y)` pairs from two named columns; rows with an empty or
/// non-numeric cell in either column are skipped.
pub fn read_series(csv: &str, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Domain("the CSV is empty".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| {
            Error::Domain(format!("no column '{name}' (have {})", header.join(", ")))
        })
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let mut out = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| {
            cells
                .get(i)
                .and_then(|c| c.parse::<f64>().ok())
                .filter(|v| v.is_finite())
        };
        if let (Some(a), Some(b)) = (get(xi), get(yi)) {
            out.push((a, b));
        }
    }
    Ok(out)
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// One polyline through the points sorted by `x` (ties keep file order), with
/// a marker per point and the axis ranges printed on the frame.
pub fn emit_plot(points: &[(f64, f64)], x_label: &str, y_label: &str) -> Result<String> {
    if points.is_empty() {
        return domain("nothing to plot: no numeric rows");
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (x0, x1) = span(
        pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let w = WIDTH - 2.0 * MARGIN;
    let h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| MARGIN + (y1 - y) / (y1 - y0) * h;
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y)))
        .collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        coords.join(" ")
    );
    for c in &coords {
        let (cx, cy) = c.split_once(',').expect("formatted with a comma");
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx}" cy="{cy}" r="3" fill="steelblue"/>"#
        );
    }
    let text = |svg: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    };
    text(
        &mut svg,
        MARGIN,
        HEIGHT - MARGIN + 16.0,
        "start",
        &format!("{x0}"),
    );
    text(
        &mut svg,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        "end",
        &format!("{x1}"),
    );
    text(&mut svg, WIDTH / 2.0, HEIGHT - 12.0, "middle", x_label);
    text(
        &mut svg,
        MARGIN - 6.0,
        HEIGHT - MARGIN,
        "end",
        &format!("{y0}"),
    );
    text(
        &mut svg,
        MARGIN - 6.0,
        MARGIN + 4.0,
        "end",
        &format!("{y1}"),
    );
    text(&mut svg, MARGIN, MARGIN - 12.0, "start", y_label);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
