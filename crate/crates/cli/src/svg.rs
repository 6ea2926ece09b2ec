//! Minimal SVG line chart for learning curves.

use std::fmt::Write;

use labelcraft::eval::LearningCurvePoint;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn polyline(points: &[(f64, f64)], colour: &str, out: &mut String) {
    if points.is_empty() {
        return;
    }
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
        coords.join(" ")
    );
    for (x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#);
    }
}

/// Training and cross-validation ROC AUC against training-set size. The
/// y axis spans the observed scores, padded and clamped to [0, 1].
pub fn learning_curve_svg(title: &str, curve: &[LearningCurvePoint]) -> String {
    let ys: Vec<f64> = curve
        .iter()
        .flat_map(|p| [p.train_score, p.cv_score])
        .flatten()
        .collect();
    let lo = ys.iter().cloned().fold(1.0_f64, f64::min);
    let lo = ((lo - 0.05).max(0.0) * 10.0).floor() / 10.0;
    let hi = 1.0;
    let max_x = curve.iter().map(|p| p.train_size).max().unwrap_or(1).max(1) as f64;

    let sx = |n: usize| PAD + (n as f64 / max_x) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{PAD}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{v:.2}</text>"##,
            r = W - PAD,
            tx = PAD - 4.0,
            ty = y + 4.0
        );
    }
    for p in curve {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(p.train_size),
            H - PAD + 16.0,
            p.train_size
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">training examples</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">ROC AUC</text>"#,
        H / 2.0,
        H / 2.0
    );

    let series = |f: fn(&LearningCurvePoint) -> Option<f64>| -> Vec<(f64, f64)> {
        curve.iter().filter_map(|p| f(p).map(|v| (sx(p.train_size), sy(v)))).collect()
    };
    polyline(&series(|p| p.train_score), "#d62728", &mut out);
    polyline(&series(|p| p.cv_score), "#2ca02c", &mut out);
    let _ = writeln!(
        out,
        r##"<text x="{x}" y="{y1}" fill="#d62728">training score</text><text x="{x}" y="{y2}" fill="#2ca02c">cross-validation score</text>"##,
        x = W - PAD - 130.0,
        y1 = H - PAD - 30.0,
        y2 = H - PAD - 14.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
