//! Minimal SVG line and scatter plots on a log x axis.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn as a polyline when true, as dots otherwise.
    pub line: bool,
    pub width: f64,
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Vertical markers at these x values.
    pub markers: Vec<f64>,
    /// Draw `y = x` across the frame.
    pub identity: bool,
    /// Linear rather than logarithmic y axis.
    pub linear_y: bool,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

impl Plot {
    pub fn render(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter().copied());
        let (mut x0, mut x1) = bounds(pts().map(|p| p.0).chain(self.markers.iter().copied()));
        let (mut y0, mut y1) = if self.linear_y {
            linear_bounds(pts().map(|p| p.1))
        } else {
            bounds(pts().map(|p| p.1))
        };
        if self.identity && !self.linear_y {
            x0 = x0.min(y0);
            y0 = x0;
            x1 = x1.max(y1);
            y1 = x1;
        }
        let sx = |x: f64| PAD + (x.log10() - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let linear_y = self.linear_y;
        let sy = move |y: f64| {
            let v = if linear_y { y } else { y.log10() };
            H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD)
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        for d in x0 as i32..=x1 as i32 {
            let x = sx(10f64.powi(d));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="#ddd"/><text x="{x:.1}" y="{}" text-anchor="middle">1e{d}</text>"##,
                PAD,
                H - PAD,
                H - PAD + 16.0
            );
        }
        let y_ticks: Vec<(f64, String)> = if self.linear_y {
            (0..=4)
                .map(|i| {
                    let v = y0 + (y1 - y0) * f64::from(i) / 4.0;
                    (v, format!("{v:.2}"))
                })
                .collect()
        } else {
            (y0 as i32..=y1 as i32)
                .map(|d| (10f64.powi(d), format!("1e{d}")))
                .collect()
        };
        for (v, text) in y_ticks {
            let y = sy(v);
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{text}</text>"##,
                PAD,
                W - PAD,
                PAD - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        if self.identity {
            let (a, b) = (10f64.powf(x0), 10f64.powf(x1));
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
                sx(a),
                sy(a),
                sx(b),
                sy(b)
            );
        }
        for &m in &self.markers {
            if m.is_finite() && m > 0.0 {
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="#444" stroke-dasharray="2 3"/>"##,
                    PAD,
                    H - PAD,
                    x = sx(m)
                );
            }
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let ok = |&(x, y): &(f64, f64)| {
                x.is_finite() && y.is_finite() && x > 0.0 && (linear_y || y > 0.0)
            };
            let visible: Vec<(f64, f64)> = s.points.iter().copied().filter(ok).collect();
            if s.line {
                // non-drawable points split the polyline
                for run in s.points.split(|p| !ok(p)).filter(|r| r.len() > 1) {
                    let path: Vec<String> = run
                        .iter()
                        .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="{}" points="{}"/>"#,
                        s.width,
                        path.join(" ")
                    );
                }
            } else {
                for &(x, y) in &visible {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="{}" fill="{color}"/>"#,
                        sx(x),
                        sy(y),
                        s.width
                    );
                }
            }
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                PAD + 8.0,
                PAD + 14.0 * (i as f64 + 1.0),
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn linear_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count.max(2) - 1) as f64))
        .collect()
}
