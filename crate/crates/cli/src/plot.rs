//! Minimal SVG line charts: NMSE and CD against missing rate, side by side.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 360.0;
const H: f64 = 260.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.08).max(1e-3);
    (x0, x1.max(x0 + 1e-9), y0 - pad, y1 + pad)
}

fn panel(svg: &mut String, ox: f64, title: &str, series: &[Series]) {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| ox + PAD + (x - x0) / (x1 - x0) * (W - 1.5 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 1.8 * PAD);
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="dimgray"/>"#,
        ox + PAD,
        0.8 * PAD,
        W - 1.5 * PAD,
        H - 1.8 * PAD
    );
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, ox + W / 2.0);
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{y:.2}</text>"#,
            ox + PAD - 4.0,
            sy(y) + 3.0
        );
    }
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{x:.2}</text>"#,
            sx(x),
            H - PAD + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">missing rate</text>"#,
        ox + W / 2.0,
        H - 8.0
    );
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{c}">{}</text>"#,
            ox + PAD + 6.0,
            0.8 * PAD + 14.0 + 12.0 * i as f64,
            escape(&s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two panels: mean NMSE (dB) and mean CD, each against missing rate.
pub fn mr_sweep_svg(nmse: &[Series], cd: &[Series]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif">"#,
        2.0 * W
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, 0.0, "NMSE (dB)", nmse);
    panel(&mut svg, W, "cosine distance", cd);
    svg.push_str("</svg>\n");
    svg
}
