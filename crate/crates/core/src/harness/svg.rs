//! Minimal SVG plots: line charts with optional bands, scatters and 2-D paths.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 40.0, 50.0]; // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Half-width of a shaded band around `y`.
    pub band: Option<Vec<f64>>,
    pub dashed: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            x,
            y,
            band: None,
            dashed: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Frame { x: (0.0, 1.0), y: (0.0, 1.0) };
        }
        let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
        let (y0, y1) = pad(y0, y1);
        let dy = 0.05 * (y1 - y0);
        Frame {
            x: pad(x0, x1),
            y: (y0 - dy, y1 + dy),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN[0] + (x - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN[0] - MARGIN[1])
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN[3] - (y - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN[2] - MARGIN[3])
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN[0], W - MARGIN[1], MARGIN[2], H - MARGIN[3]);
    let _ = writeln!(s, "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t);
    for i in 0..=4 {
        let fx = frame.x.0 + (frame.x.1 - frame.x.0) * i as f64 / 4.0;
        let fy = frame.y.0 + (frame.y.1 - frame.y.0) * i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", frame.px(fx), b + 16.0, tick(fx));
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", l - 4.0, frame.py(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">{1}</text>",
        (t + b) / 2.0,
        escape(y_label)
    );
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(s: &mut String, names: &[(String, &str)]) {
    for (i, (name, c)) in names.iter().enumerate() {
        let y = MARGIN[2] + 14.0 + 16.0 * i as f64;
        let x = W - MARGIN[1] - 150.0;
        let _ = writeln!(s, "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{c}\"/>", y - 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\">{}</text>", x + 16.0, escape(name));
    }
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| {
        let band = s.band.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
        s.x.iter()
            .zip(&s.y)
            .zip(band)
            .flat_map(|((&x, &y), b)| [(x, y - b), (x, y + b)])
            .collect::<Vec<_>>()
    }));
    let mut s = open(title, &frame, x_label, y_label);
    for (i, ser) in series.iter().enumerate() {
        let c = color(i);
        if let Some(band) = &ser.band {
            let upper: Vec<String> = ser.x.iter().zip(&ser.y).zip(band).map(|((&x, &y), &b)| format!("{:.2},{:.2}", frame.px(x), frame.py(y + b))).collect();
            let lower: Vec<String> = ser.x.iter().zip(&ser.y).zip(band).rev().map(|((&x, &y), &b)| format!("{:.2},{:.2}", frame.px(x), frame.py(y - b))).collect();
            let _ = writeln!(s, "<polygon points=\"{} {}\" fill=\"{c}\" fill-opacity=\"0.2\" stroke=\"none\"/>", upper.join(" "), lower.join(" "));
        }
        let pts: Vec<String> = ser.x.iter().zip(&ser.y).map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let dash = if ser.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"2\"{dash}/>", pts.join(" "));
    }
    let names: Vec<(String, &str)> = series.iter().enumerate().map(|(i, s)| (s.name.clone(), color(i))).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Points colored by integer label.
pub fn scatter_plot(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, usize)]) -> String {
    let frame = Frame::fit(points.iter().map(|&(x, y, _)| (x, y)));
    let mut s = open(title, &frame, x_label, y_label);
    for &(x, y, l) in points {
        let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\"/>", frame.px(x), frame.py(y), color(l));
    }
    let mut labels: Vec<usize> = points.iter().map(|p| p.2).collect();
    labels.sort_unstable();
    labels.dedup();
    let names: Vec<(String, &str)> = labels.iter().map(|&l| (format!("component {}", l + 1), color(l))).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Paths in the plane; the first is drawn thick.
pub fn path_plot(title: &str, paths: &[(String, Vec<(f64, f64)>)]) -> String {
    let frame = Frame::fit(paths.iter().flat_map(|(_, p)| p.iter().copied()));
    let mut s = open(title, &frame, "x [m]", "y [m]");
    for (i, (_, p)) in paths.iter().enumerate() {
        let pts: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let w = if i == 0 { 3 } else { 1 };
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{w}\"/>", pts.join(" "), color(i));
        if let Some(&(x, y)) = p.last() {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>", frame.px(x), frame.py(y), color(i));
        }
    }
    let names: Vec<(String, &str)> = paths.iter().enumerate().map(|(i, (n, _))| (n.clone(), color(i))).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let s = line_plot(
            "a < b",
            "steps",
            "return",
            &[Series {
                band: Some(vec![1.0, 1.0]),
                ..Series::line("x", vec![0.0, 1.0], vec![2.0, 3.0])
            }],
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        assert_eq!(s.matches("<polygon").count(), 1);
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let s = scatter_plot("t", "z1", "z2", &[(1.0, 1.0, 0), (1.0, 1.0, 2)]);
        assert!(!s.contains("NaN") && !s.contains("inf"));
        assert_eq!(s.matches("<circle").count(), 2);
        let p = path_plot("t", &[("robot".into(), vec![])]);
        assert!(!p.contains("NaN"));
    }
}
