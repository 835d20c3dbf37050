//! Minimal SVG line plots of rejection curves.

use std::fmt::Write;

use crate::RejectionCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const LEGEND: f64 = 170.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Rejection rate against sample size, one polyline per curve, with a
/// dashed horizontal line at `level` when given.
pub fn render(title: &str, curves: &[RejectionCurve], level: Option<f64>) -> String {
    let xs = curves.iter().flat_map(|c| c.sample_sizes.iter().map(|&n| n as f64));
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min { (x_min, x_max) } else { (0.0, x_min.max(0.0) + 1.0) };
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN + (1.0 - y.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{}</text>"#, MARGIN + plot_w / 2.0, escape(title));
    let (x0, y0, x1, y1) = (px(x_min), py(0.0), px(x_max), py(1.0));
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, py(v) + 4.0);
        let xv = x_min + v * (x_max - x_min);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xv:.0}</text>"#, px(xv), y0 + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">sample size</text>"#, MARGIN + plot_w / 2.0, HEIGHT - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">rejection rate</text>"#,
        MARGIN + plot_h / 2.0,
        MARGIN + plot_h / 2.0
    );
    if let Some(a) = level {
        let _ = writeln!(svg, r#"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="gray" stroke-dasharray="4 4"/>"#, py(a));
    }
    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = c
            .sample_sizes
            .iter()
            .zip(&c.rates)
            .map(|(&n, &r)| format!("{:.2},{:.2}", px(n as f64), py(r)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 18.0 * k as f64;
        let lx = WIDTH - LEGEND - MARGIN / 2.0 + 10.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&c.method));
    }
    svg.push_str("</svg>\n");
    svg
}
