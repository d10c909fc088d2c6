//! Minimal standalone SVG 1.1 charts: scatter markers with optional
//! connecting lines, autoscaled axes with a 5% margin.
//!
//! Output is a pure function of the inputs; all coordinates are printed
//! with fixed precision.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Connect consecutive points with a polyline.
    pub line: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
}

impl AxesSpec {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            width: 640.0,
            height: 420.0,
        }
    }
}

pub const MARGIN_FRACTION: f64 = 0.05;
const PAD_LEFT: f64 = 70.0;
const PAD_RIGHT: f64 = 150.0;
const PAD_TOP: f64 = 40.0;
const PAD_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Data range widened by 5% of its span on both sides. A degenerate range
/// is widened by 5% of its magnitude, or by 0.05 around zero.
pub fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 {
        MARGIN_FRACTION * span
    } else if lo != 0.0 {
        MARGIN_FRACTION * lo.abs()
    } else {
        MARGIN_FRACTION
    };
    (lo - pad, hi + pad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &[Series], axes: &AxesSpec) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::Empty("plot series"));
    }
    if all.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite(format!("plot data for `{}`", axes.title)));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = all.iter().map(f).collect();
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (x0, x1) = {
        let (a, b) = fold(|p| p.0);
        padded_range(a, b)
    };
    let (y0, y1) = {
        let (a, b) = fold(|p| p.1);
        padded_range(a, b)
    };
    let (w, h) = (axes.width, axes.height);
    let (pw, ph) = (w - PAD_LEFT - PAD_RIGHT, h - PAD_TOP - PAD_BOTTOM);
    let px = |x: f64| PAD_LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| PAD_TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        PAD_LEFT + pw / 2.0,
        esc(&axes.title)
    );
    let _ = writeln!(
        s,
        r#"<g id="plot-area" data-x-min="{x0:e}" data-x-max="{x1:e}" data-y-min="{y0:e}" data-y-max="{y1:e}" data-left="{PAD_LEFT:.3}" data-top="{PAD_TOP:.3}" data-width="{pw:.3}" data-height="{ph:.3}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{PAD_LEFT:.3}" y="{PAD_TOP:.3}" width="{pw:.3}" height="{ph:.3}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            PAD_TOP + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            PAD_LEFT - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        if ser.line && ser.points.len() > 1 {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{colour}"/>"#, px(x), py(y));
        }
        let ly = PAD_TOP + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{ly:.3}" font-family="sans-serif" font-size="12" fill="{colour}">{}</text>"#,
            PAD_LEFT + pw + 12.0,
            esc(&ser.label)
        );
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        PAD_LEFT + pw / 2.0,
        h - 12.0,
        esc(&axes.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {:.3})">{}</text>"#,
        PAD_TOP + ph / 2.0,
        PAD_TOP + ph / 2.0,
        esc(&axes.y_label)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_plot(series: &[Series], axes: &AxesSpec, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(series, axes)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        tag[start..start + tag[start..].find('"').unwrap()].parse().unwrap()
    }

    fn axes() -> AxesSpec {
        AxesSpec::new("t", "x", "y")
    }

    #[test]
    fn single_point_has_one_marker() {
        let s = Series {
            label: "one".into(),
            points: vec![(1.0, 2.0)],
            line: true,
        };
        let svg = render_svg(&[s], &axes()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = Series {
            label: "a<b".into(),
            points: (0..30).map(|i| (i as f64 * 0.37, (i as f64).sin())).collect(),
            line: true,
        };
        let a = render_svg(std::slice::from_ref(&s), &axes()).unwrap();
        assert_eq!(a, render_svg(&[s], &axes()).unwrap());
        assert!(a.contains("a&lt;b"));
    }

    #[test]
    fn empty_and_non_finite_are_rejected() {
        assert!(matches!(render_svg(&[], &axes()), Err(Error::Empty(_))));
        let s = Series {
            label: "bad".into(),
            points: vec![(f64::NAN, 1.0)],
            line: false,
        };
        assert!(render_svg(&[s], &axes()).is_err());
    }

    #[test]
    fn autoscale_parses_back_with_margin() {
        let pts = vec![(-2.0, 10.0), (3.0, 30.0), (0.5, 12.0)];
        let svg = render_svg(
            &[Series {
                label: "s".into(),
                points: pts.clone(),
                line: false,
            }],
            &axes(),
        )
        .unwrap();
        let area = svg.lines().find(|l| l.starts_with("<g id=\"plot-area\"")).unwrap();
        let (x0, x1, y0, y1) = (
            attr(area, "data-x-min"),
            attr(area, "data-x-max"),
            attr(area, "data-y-min"),
            attr(area, "data-y-max"),
        );
        assert!((x0 - (-2.25)).abs() < 1e-12 && (x1 - 3.25).abs() < 1e-12);
        assert!((y0 - 9.0).abs() < 1e-12 && (y1 - 31.0).abs() < 1e-12);
        let (left, top, w, h) = (
            attr(area, "data-left"),
            attr(area, "data-top"),
            attr(area, "data-width"),
            attr(area, "data-height"),
        );
        let circles: Vec<&str> = svg.lines().filter(|l| l.starts_with("<circle")).collect();
        for (c, (x, y)) in circles.iter().zip(&pts) {
            let bx = x0 + (attr(c, "cx") - left) / w * (x1 - x0);
            let by = y1 - (attr(c, "cy") - top) / h * (y1 - y0);
            assert!((bx - x).abs() < 1e-2 && (by - y).abs() < 1e-2);
            assert!(attr(c, "cx") > left && attr(c, "cx") < left + w);
        }
    }

    #[test]
    fn degenerate_range_is_widened() {
        assert_eq!(padded_range(2.0, 2.0), (1.9, 2.1));
        assert_eq!(padded_range(0.0, 0.0), (-0.05, 0.05));
    }
}
