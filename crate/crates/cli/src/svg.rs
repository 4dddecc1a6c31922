//! Minimal SVG charts: scatter, interval (caterpillar), banded lines and
//! traces. Output depends only on the data, so figures are reproducible.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Data-to-pixel mapping for one panel.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            f.px(fx),
            b + 16.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            l - 4.0,
            f.py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

fn legend(s: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - MARGIN - 120.0,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            W - MARGIN - 106.0,
            y,
            escape(l)
        );
    }
}

/// Points with an optional least-squares line `(intercept, slope)`.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, x: &[f64], y: &[f64], fit: Option<(f64, f64)>) -> String {
    let f = Frame::new(x.iter().copied(), y.iter().copied());
    let mut s = open(title, xlabel, ylabel, &f);
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.5"/>"#,
            f.px(*a),
            f.py(*b),
            PALETTE[0]
        );
    }
    if let Some((a, b)) = fit {
        let (xa, xb) = (f.x0, f.x1);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
            f.px(xa),
            f.py(a + b * xa),
            f.px(xb),
            f.py(a + b * xb),
            PALETTE[1]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One vertical interval per item with a dot at the mean; `group` picks
/// the colour.
pub fn caterpillar(title: &str, ylabel: &str, mean: &[f64], lo: &[f64], hi: &[f64], group: &[usize], labels: &[&str]) -> String {
    let n = mean.len();
    let f = Frame::new(
        [0.0, n.max(1) as f64].into_iter(),
        lo.iter().chain(hi).copied(),
    );
    let mut s = open(title, "rank", ylabel, &f);
    for i in 0..n {
        let x = f.px(i as f64 + 0.5);
        let c = PALETTE[group[i] % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}" stroke-opacity="0.5"/><circle cx="{x:.2}" cy="{:.2}" r="1.8" fill="{c}"/>"#,
            f.py(lo[i]),
            f.py(hi[i]),
            f.py(mean[i])
        );
    }
    legend(&mut s, labels);
    s.push_str("</svg>\n");
    s
}

/// A named series of (x, mean, lo, hi) points.
pub struct Band<'a> {
    pub label: &'a str,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Lines through the means with shaded intervals and error bars.
pub fn bands(title: &str, xlabel: &str, ylabel: &str, series: &[Band]) -> String {
    let f = Frame::new(
        series.iter().flat_map(|b| b.x.iter().copied()),
        series.iter().flat_map(|b| b.lo.iter().chain(&b.hi).copied()),
    );
    let mut s = open(title, xlabel, ylabel, &f);
    for (k, b) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let mut poly: Vec<String> = b.x.iter().zip(&b.hi).map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
        poly.extend(b.x.iter().zip(&b.lo).rev().map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))));
        let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.15"/>"#, poly.join(" "));
        let line: Vec<String> = b.x.iter().zip(&b.mean).map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        for i in 0..b.x.len() {
            let x = f.px(b.x[i]);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                f.py(b.lo[i]),
                f.py(b.hi[i]),
                f.py(b.mean[i])
            );
        }
    }
    legend(&mut s, &series.iter().map(|b| b.label).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Trace plot of a chain with its running mean.
pub fn trace(title: &str, values: &[f64], running_mean: &[f64]) -> String {
    let n = values.len();
    let f = Frame::new([0.0, n.max(1) as f64].into_iter(), values.iter().copied());
    let mut s = open(title, "retained draw", title, &f);
    for (k, v) in [values, running_mean].iter().enumerate() {
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{:.2},{:.2}", f.px(i as f64), f.py(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            pts.join(" "),
            PALETTE[k],
            if k == 0 { 0.7 } else { 2.0 }
        );
    }
    legend(&mut s, &["draws", "running mean"]);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_is_well_formed() {
        let s = scatter("a<b", "x", "y", &[0.0, 1.0], &[1.0, 2.0], Some((1.0, 1.0)));
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("<circle").count(), 2);
    }

    #[test]
    fn degenerate_ranges_do_not_produce_nan() {
        let s = trace("c", &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]);
        assert!(!s.contains("NaN"));
        let b = bands(
            "t",
            "x",
            "y",
            &[Band {
                label: "one",
                x: vec![1.0],
                mean: vec![0.0],
                lo: vec![0.0],
                hi: vec![0.0],
            }],
        );
        assert!(!b.contains("NaN"));
    }
}
