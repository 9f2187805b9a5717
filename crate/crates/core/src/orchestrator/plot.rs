use std::fmt::Write;

use super::compare::round_curve;
use super::metrics::MetricsLog;

/// Trailing moving average over `window` points; `window <= 1` is a no-op.
pub fn smooth(values: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    if window <= 1 {
        return values.to_vec();
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &(x, y)) in values.iter().enumerate() {
        sum += y;
        if i >= window {
            sum -= values[i - window].1;
        }
        out.push((x, sum / (i + 1).min(window) as f64));
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 50.0;

fn panel(svg: &mut String, top: f64, title: &str, series: &[(String, Vec<(f64, f64)>)]) {
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (PANEL_W - 2.0 * MARGIN);
    let sy = |y: f64| top + PANEL_H - MARGIN + (y0 - y) / (y1 - y0) * (PANEL_H - 1.5 * MARGIN);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="14" font-family="sans-serif">{}</text>"#,
        MARGIN,
        top + 20.0,
        title
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        top + 0.5 * MARGIN,
        PANEL_W - 2.0 * MARGIN,
        PANEL_H - 1.5 * MARGIN
    );
    for (v, y) in [(y1, sy(y1)), (y0, sy(y0))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{:.3}</text>"#,
            MARGIN - 4.0,
            y + 3.0,
            v
        );
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">{v}</text>"#,
            top + PANEL_H - MARGIN + 14.0
        );
    }
    for (i, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}" font-family="sans-serif">{name}</text>"#,
            PANEL_W - MARGIN - 150.0,
            top + 20.0 + 13.0 * i as f64
        );
    }
}

/// Three stacked panels (mean reward, test accuracy, conflicts per round)
/// with one line per labelled run.
pub fn render_svg(runs: &[(String, &MetricsLog)], smooth_window: usize) -> String {
    let mut reward = Vec::new();
    let mut accuracy = Vec::new();
    let mut conflicts = Vec::new();
    for (label, log) in runs {
        let curve = round_curve(log);
        let r: Vec<(f64, f64)> = curve.iter().map(|p| (p.round as f64, p.reward)).collect();
        let a: Vec<(f64, f64)> = curve
            .iter()
            .filter_map(|p| p.accuracy.map(|a| (p.round as f64, a)))
            .collect();
        let c: Vec<(f64, f64)> = curve.iter().map(|p| (p.round as f64, p.conflicts)).collect();
        reward.push((label.clone(), smooth(&r, smooth_window)));
        accuracy.push((label.clone(), smooth(&a, smooth_window.div_ceil(10).max(1))));
        conflicts.push((label.clone(), smooth(&c, smooth_window)));
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{}" viewBox="0 0 {PANEL_W} {}">"#,
        3.0 * PANEL_H,
        3.0 * PANEL_H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, 0.0, "reward", &reward);
    panel(&mut svg, PANEL_H, "test accuracy", &accuracy);
    panel(&mut svg, 2.0 * PANEL_H, "conflicts per round", &conflicts);
    svg.push_str("</svg>\n");
    svg
}
