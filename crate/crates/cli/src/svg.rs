//! Minimal SVG 1.1 line plots: stacked panels, one `polyline` per curve.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 30.0;
/// Polylines are decimated to at most this many vertices.
const MAX_POINTS: usize = 800;

#[derive(Debug, Clone)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub width: f64,
    pub opacity: f64,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>, color: &str) -> Self {
        Self {
            points,
            color: color.to_string(),
            width: 1.5,
            opacity: 1.0,
        }
    }

    pub fn thin(mut self, width: f64, opacity: f64) -> Self {
        self.width = width;
        self.opacity = opacity;
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub curves: Vec<Curve>,
    /// Horizontal reference lines `(y, color)`.
    pub levels: Vec<(f64, String)>,
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &panel.curves {
        for &(x, y) in &c.points {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
    }
    for (y, _) in &panel.levels {
        b.2 = b.2.min(*y);
        b.3 = b.3.max(*y);
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 - b.0 <= 0.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 - b.2 <= 1e-300 {
        let pad = b.2.abs().max(1.0) * 0.5;
        b.2 -= pad;
        b.3 += pad;
    }
    let pad = 0.05 * (b.3 - b.2);
    (b.0, b.1, b.2 - pad, b.3 + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the panels stacked vertically.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * PANEL_HEIGHT;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_BOTTOM - 20.0;
    for (p, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + p as f64 * PANEL_HEIGHT + 20.0;
        let (x0, x1, y0, y1) = bounds(panel);
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + plot_h - (y - y0) / (y1 - y0) * plot_h;
        let _ = writeln!(out, "<g>");
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN_LEFT}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            top - 5.0,
            escape(&panel.title)
        );
        for (y, label_y) in [(y1, top + 10.0), (y0, top + plot_h)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{label_y:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{y:.4}</text>"#,
                MARGIN_LEFT - 4.0
            );
        }
        for (x, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{x:.3}</text>"#,
                sx(x),
                top + plot_h + 14.0
            );
        }
        for (y, color) in &panel.levels {
            let _ = writeln!(
                out,
                r#"<polyline points="{:.2},{:.2} {:.2},{:.2}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="4,3"/>"#,
                sx(x0),
                sy(*y),
                sx(x1),
                sy(*y)
            );
        }
        for c in &panel.curves {
            let step = c.points.len().div_ceil(MAX_POINTS).max(1);
            let mut pts = String::new();
            let last = c.points.len().saturating_sub(1);
            for (i, &(x, y)) in c.points.iter().enumerate() {
                if (i % step == 0 || i == last) && x.is_finite() && y.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
                }
            }
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}" stroke-opacity="{}"/>"#,
                pts.trim_end(),
                c.color,
                c.width,
                c.opacity
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}
