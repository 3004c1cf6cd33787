//! Minimal deterministic SVG figures.

use std::fmt::Write;

use crate::eval::AccuracyMatrix;

const CELL: f64 = 36.0;
const MARGIN: f64 = 48.0;

fn shade(v: f64) -> String {
    // white at 0, dark blue at 1
    let t = v.clamp(0.0, 1.0);
    let r = (255.0 - 225.0 * t).round() as u8;
    let g = (255.0 - 175.0 * t).round() as u8;
    let b = (255.0 - 75.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heat grid of per-group accuracy: rows are states, columns are groups.
/// Cells above the diagonal are hatched out, empty groups are grey.
pub fn accuracy_heatmap_svg(matrix: &AccuracyMatrix, title: &str) -> String {
    let n = matrix.num_states();
    let w = MARGIN * 2.0 + CELL * n as f64;
    let h = MARGIN * 2.0 + CELL * n as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    for s in 1..=n {
        let y = MARGIN + CELL * (s - 1) as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">s{s}</text>"#, MARGIN - 4.0, y + CELL / 2.0 + 3.0);
        for k in 1..=n {
            let x = MARGIN + CELL * (k - 1) as f64;
            if k > s {
                let _ = writeln!(out, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#f4f4f4" stroke="#ddd"/>"##);
                continue;
            }
            match matrix.get(s, k) {
                Some(v) => {
                    let _ = writeln!(out, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#fff"/>"##, shade(v));
                    let colour = if v > 0.55 { "#fff" } else { "#000" };
                    let _ = writeln!(
                        out,
                        r#"<text x="{}" y="{}" text-anchor="middle" fill="{colour}">{:.0}</text>"#,
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 3.0,
                        v * 100.0
                    );
                }
                None => {
                    let _ = writeln!(out, r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#bbb" stroke="#fff"/>"##);
                }
            }
        }
    }
    for k in 1..=n {
        let x = MARGIN + CELL * (k as f64 - 0.5);
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">g{k}</text>"#, h - MARGIN + 14.0);
    }
    out.push_str("</svg>\n");
    out
}

/// A named accuracy-per-state series. `dashed` draws a dashed stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
    pub dashed: bool,
}

const PALETTE: [&str; 6] = ["#555555", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Line chart of accuracy (0..1) against state index.
pub fn accuracy_lines_svg(series: &[Series], title: &str) -> String {
    let (w, h) = (480.0, 300.0);
    let (pw, ph) = (w - 2.0 * MARGIN, h - 2.0 * MARGIN);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let px = |i: usize| MARGIN + pw * i as f64 / (n - 1) as f64;
    let py = |v: f64| MARGIN + ph * (1.0 - v.clamp(0.0, 1.0));
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>"##
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, MARGIN - 4.0, py(v) + 3.0, v);
    }
    for i in 0..n {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(i), h - MARGIN + 14.0, i + 1);
    }
    for (idx, s) in series.iter().enumerate() {
        let colour = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"{dash}/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 12.0 + 12.0 * idx as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{colour}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            w - MARGIN - 90.0,
            ly - 3.0,
            w - MARGIN - 70.0,
            ly - 3.0,
            w - MARGIN - 66.0,
            ly,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
