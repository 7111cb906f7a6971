//! Minimal SVG charts.
//!
//! Output is plain SVG 1.1 with fixed-precision numbers so that identical
//! data give identical bytes. Each plotted point carries `data-x` and
//! `data-y` attributes (and `data-label` when labelled) holding the
//! unscaled values, which keeps the figures machine-checkable.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
    LinePoints,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub style: Style,
    /// `(x, y, label)`; non-finite points are skipped.
    pub points: Vec<(f64, f64, Option<String>)>,
}

impl Series {
    pub fn new(name: impl Into<String>, style: Style, xy: impl IntoIterator<Item = (f64, f64)>) -> Self {
        Self {
            name: name.into(),
            style,
            points: xy.into_iter().map(|(x, y)| (x, y, None)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw the y axis increasing downward (formant charts).
    pub invert_y: bool,
    /// Draw the x axis increasing leftward.
    pub invert_x: bool,
    /// Fixed y range instead of the data range.
    pub y_range: Option<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rounds a range outward to a step from {1, 2, 5} x 10^k giving about six
/// ticks.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 7.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Self::default()
        }
    }

    fn finite_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| (p.0, p.1))
    }

    pub fn to_svg(&self) -> String {
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in self.finite_points() {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        if x_lo > x_hi {
            (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
        }
        let (x_lo, x_hi) = padded(x_lo, x_hi);
        let (y_lo, y_hi) = self.y_range.unwrap_or_else(|| padded(y_lo, y_hi));
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| {
            let t = (x - x_lo) / (x_hi - x_lo);
            MARGIN_LEFT + plot_w * if self.invert_x { 1.0 - t } else { t }
        };
        let sy = |y: f64| {
            let t = (y - y_lo) / (y_hi - y_lo);
            MARGIN_TOP + plot_h * if self.invert_y { t } else { 1.0 - t }
        };

        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            w,
            r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
        );
        for t in ticks(x_lo, x_hi) {
            let x = sx(t);
            let _ = writeln!(
                w,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                MARGIN_TOP + plot_h,
                MARGIN_TOP + plot_h + 5.0,
                MARGIN_TOP + plot_h + 18.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y_lo.min(y_hi), y_hi.max(y_lo)) {
            let y = sy(t);
            let _ = writeln!(
                w,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT - 5.0,
                MARGIN_LEFT - 8.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 15.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            w,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            esc(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<&(f64, f64, Option<String>)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect();
            let _ = writeln!(w, r#"<g class="series" data-name="{}">"#, esc(&s.name));
            if matches!(s.style, Style::Line | Style::LinePoints) && pts.len() > 1 {
                let path: Vec<String> = pts
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                    .collect();
                let _ = writeln!(
                    w,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            for p in &pts {
                let label = p
                    .2
                    .as_ref()
                    .map(|l| format!(r#" data-label="{}""#, esc(l)))
                    .unwrap_or_default();
                let r = if s.style == Style::Line { 1.5 } else { 3.5 };
                let _ = writeln!(
                    w,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}" data-x="{}" data-y="{}"{label}/>"#,
                    sx(p.0),
                    sy(p.1),
                    p.0,
                    p.1
                );
            }
            let _ = writeln!(w, "</g>");
            let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
            let lx = WIDTH - MARGIN_RIGHT + 12.0;
            let _ = writeln!(
                w,
                r#"<rect x="{lx}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{}" y="{:.1}">{}</text>"#,
                ly - 9.0,
                lx + 15.0,
                ly,
                esc(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Reads back the `(series, x, y, label)` data attributes of a chart.
pub fn plotted_points(svg: &str) -> Vec<(String, f64, f64, Option<String>)> {
    let attr = |line: &str, key: &str| -> Option<String> {
        let pat = format!(r#"{key}=""#);
        let start = line.find(&pat)? + pat.len();
        let end = line[start..].find('"')? + start;
        Some(line[start..end].to_string())
    };
    let mut series = String::new();
    let mut out = Vec::new();
    for line in svg.lines() {
        if line.starts_with(r#"<g class="series""#) {
            series = attr(line, "data-name").unwrap_or_default();
        } else if line.starts_with("<circle") {
            if let (Some(x), Some(y)) = (attr(line, "data-x"), attr(line, "data-y")) {
                if let (Ok(x), Ok(y)) = (x.parse(), y.parse()) {
                    out.push((series.clone(), x, y, attr(line, "data-label")));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_round_trip_through_the_svg() {
        let mut c = Chart::new("t", "x", "y");
        c.series.push(Series::new("a", Style::LinePoints, [(1.0, 2.5), (2.0, f64::NAN), (3.0, -1.25)]));
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let pts = plotted_points(&svg);
        assert_eq!(
            pts,
            vec![("a".to_string(), 1.0, 2.5, None), ("a".to_string(), 3.0, -1.25, None)]
        );
    }

    #[test]
    fn identical_data_give_identical_bytes() {
        let mk = || {
            let mut c = Chart::new("t", "x", "y");
            c.series.push(Series::new("a", Style::Points, [(0.1, 0.2), (0.3, 0.7)]));
            c.to_svg()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn ticks_cover_the_range() {
        let t = ticks(0.0, 47.0);
        assert_eq!(t.first(), Some(&0.0));
        assert!(t.len() >= 4 && t.len() <= 8);
        assert!(ticks(3.0, 3.0 + 1e-15).len() <= 1);
    }

    #[test]
    fn labels_are_escaped() {
        let mut c = Chart::new("a<b", "x", "y");
        let mut s = Series::new("s&t", Style::Points, [(1.0, 1.0)]);
        s.points[0].2 = Some("\"q\"".into());
        c.series.push(s);
        let svg = c.to_svg();
        assert!(svg.contains("a&lt;b") && svg.contains("s&amp;t"));
        assert_eq!(plotted_points(&svg)[0].3.as_deref(), Some("&quot;q&quot;"));
    }
}
