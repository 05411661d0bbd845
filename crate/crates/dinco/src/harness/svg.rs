//! Minimal SVG reliability diagrams and ROC curves.

use std::fmt::Write;

use crate::metrics::{BinStat, RocPoint};

const SIZE: f64 = 320.0;
const PAD: f64 = 40.0;

fn x(v: f64) -> f64 {
    PAD + v * SIZE
}

fn y(v: f64) -> f64 {
    PAD + (1.0 - v) * SIZE
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let w = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        w / 2.0,
        PAD / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        w - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{y_label}</text>"#,
        w / 2.0,
        w / 2.0
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#,
            x(t),
            y(0.0) + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#,
            x(0.0) - 4.0,
            y(t) + 4.0
        );
    }
    s
}

/// Accuracy per confidence bin. Bars darken with bin size and carry their
/// instance counts.
pub fn reliability(method: &str, bins: &[BinStat]) -> String {
    let mut s = frame(&format!("{method} reliability"), "confidence", "accuracy");
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    for b in bins {
        let Some(acc) = b.accuracy else { continue };
        let opacity = 0.2 + 0.8 * b.count as f64 / max;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#3060c0" fill-opacity="{opacity:.3}" stroke="white"/>"##,
            x(b.lo),
            y(acc),
            (b.hi - b.lo) * SIZE,
            acc * SIZE
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
            x((b.lo + b.hi) / 2.0),
            y(acc) - 3.0,
            b.count
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn roc(method: &str, points: &[RocPoint], auc: Option<f64>) -> String {
    let title = match auc {
        Some(a) => format!("{method} ROC (AUC {a:.3})"),
        None => format!("{method} ROC"),
    };
    let mut s = frame(&title, "false positive rate", "true positive rate");
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#c03030" stroke-width="2"/>"##,
        path.join(" ")
    );
    s.push_str("</svg>\n");
    s
}
