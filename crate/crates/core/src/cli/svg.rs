//! Minimal static SVG charts: line plots, scatter plots and heatmaps.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Lines,
    Markers,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, y_transform: fn(f64) -> f64) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(out, r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(out, r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            py + 4.0,
            tick_label(y_transform(yv))
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Line or scatter chart. With `log_y`, non-positive values are dropped and
/// the axis shows powers of ten.
pub fn chart(title: &str, x_label: &str, y_label: &str, series: &[Series], style: Style, log_y: bool) -> String {
    let map_y = |y: f64| if log_y { if y > 0.0 { y.log10() } else { f64::NAN } } else { y };
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| map_y(p.1))),
    };
    let mut out = String::new();
    header(&mut out, title);
    let inverse: fn(f64) -> f64 = if log_y { |v| 10f64.powf(v) } else { |v| v };
    axes(&mut out, &frame, x_label, y_label, inverse);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .map(|&(x, y)| (x, map_y(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (frame.px(x), frame.py(y)))
            .collect();
        if style == Style::Lines && pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        for (x, y) in &pts {
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
        }
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="12" height="4" fill="{color}"/>"#, ly - 6.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 18.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn color_map(t: f64) -> String {
    // Dark blue through teal and yellow.
    const STOPS: [(f64, f64, f64); 4] = [(68.0, 1.0, 84.0), (49.0, 104.0, 142.0), (53.0, 183.0, 121.0), (253.0, 231.0, 37.0)];
    if !t.is_finite() {
        return "#cccccc".into();
    }
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of `values[iy][ix]` on the grid `xs × ys`. Missing (NaN) cells are grey.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> String {
    let step = |v: &[f64]| if v.len() > 1 { (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64 } else { 1.0 };
    let (dx, dy) = (step(xs), step(ys));
    let bound = |v: &[f64], d: f64| match (v.first(), v.last()) {
        (Some(a), Some(b)) => (a - 0.5 * d, b + 0.5 * d),
        _ => (0.0, 1.0),
    };
    let frame = Frame {
        x: bound(xs, dx),
        y: bound(ys, dy),
    };
    let (lo, hi) = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    header(&mut out, title);
    for (iy, &y) in ys.iter().enumerate() {
        for (ix, &x) in xs.iter().enumerate() {
            let v = values.get(iy).and_then(|r| r.get(ix)).copied().unwrap_or(f64::NAN);
            let (px0, px1) = (frame.px(x - 0.5 * dx), frame.px(x + 0.5 * dx));
            let (py0, py1) = (frame.py(y + 0.5 * dy), frame.py(y - 0.5 * dy));
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}</title></rect>"#,
                px0.min(px1),
                py0.min(py1),
                (px1 - px0).abs(),
                (py1 - py0).abs(),
                color_map((v - lo) / span),
                tick_label(v)
            );
        }
    }
    axes(&mut out, &frame, x_label, y_label, |v| v);
    let lx = WIDTH - RIGHT + 20.0;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let y = HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM);
        let h = (HEIGHT - TOP - BOTTOM) / 10.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            y - h,
            h,
            color_map(t)
        );
    }
    if lo.is_finite() {
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, HEIGHT - BOTTOM, tick_label(lo));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, TOP + 10.0, tick_label(hi));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let s = vec![
            Series::new("a<b", vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)]),
            Series::new("c", vec![(0.5, 1e-3)]),
        ];
        let svg = chart("t", "x", "y", &s, Style::Lines, true);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn heatmap_has_one_cell_per_value() {
        let svg = heatmap("m", "J", "alpha", &[0.0, 1.0, 2.0], &[1.0, 2.0], &[vec![0.1, 0.2, 0.3], vec![0.4, f64::NAN, 0.6]]);
        assert_eq!(svg.matches("<title>").count(), 6);
        assert!(svg.contains("#cccccc"));
    }
}
