//! Minimal standalone SVG line plots. Output depends only on the input
//! values, so identical inputs give identical bytes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub ys: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, ys: Vec<f64>) -> Self {
        Series {
            label: label.into(),
            ys,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{what} has a non-finite value at index {i}"))),
        None => Ok(()),
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` against shared abscissae `xs`.
///
/// With `log_y`, ordinates are plotted as `log10`; values that are not
/// strictly positive are floored at the smallest positive value present.
pub fn emit_svg(xs: &[f64], series: &[Series], labels: &PlotLabels, log_y: bool) -> Result<String> {
    if series.is_empty() || xs.is_empty() {
        return Err(Error::invalid("nothing to plot: empty series"));
    }
    check_finite(xs, "x axis")?;
    for s in series {
        if s.ys.len() != xs.len() {
            return Err(Error::invalid(format!(
                "series {:?} has {} points but the x axis has {}",
                s.label,
                s.ys.len(),
                xs.len()
            )));
        }
        check_finite(&s.ys, &format!("series {:?}", s.label))?;
    }

    let floor = series
        .iter()
        .flat_map(|s| s.ys.iter().copied())
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };
    let tf = |v: f64| if log_y { v.max(floor).log10() } else { v };

    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|s| s.ys.iter().map(|&v| tf(v))));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if !labels.title.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&labels.title)
        );
    }
    let (ax, ay) = (LEFT, TOP + ph);
    let _ = writeln!(
        out,
        r#"<path d="M{ax:.2},{TOP:.2} L{ax:.2},{ay:.2} L{:.2},{ay:.2}" fill="none" stroke="black"/>"#,
        LEFT + pw
    );
    for i in 0..TICKS {
        let fx = x0 + (x1 - x0) * i as f64 / (TICKS - 1) as f64;
        let fy = y0 + (y1 - y0) * i as f64 / (TICKS - 1) as f64;
        let ylabel = if log_y {
            format!("1e{fy:.2}")
        } else {
            format!("{fy:.3e}")
        };
        let _ = writeln!(
            out,
            r#"<line x1="{0:.2}" y1="{ay:.2}" x2="{0:.2}" y2="{1:.2}" stroke="black"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{3:.4e}</text>"#,
            px(fx),
            ay + 5.0,
            ay + 18.0,
            fx
        );
        let _ = writeln!(
            out,
            r#"<line x1="{ax:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{4}</text>"#,
            py(fy),
            ax - 5.0,
            ax - 8.0,
            py(fy) + 4.0,
            ylabel
        );
    }
    if !labels.x.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 8.0,
            escape(&labels.x)
        );
    }
    if !labels.y.is_empty() {
        let (cx, cy) = (16.0, TOP + ph / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 {cx:.2} {cy:.2})">{}</text>"#,
            escape(&labels.y)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(&s.ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(tf(y))))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
                pts.split(' ')
                    .map(|p| {
                        let (a, b) = p.split_once(',').unwrap();
                        (a.parse().unwrap(), b.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_horizontal() {
        let svg = emit_svg(
            &[1.0, 2.0, 3.0],
            &[Series::new("c", vec![0.5; 3])],
            &PlotLabels::default(),
            false,
        )
        .unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 3);
        assert!(lines[0].iter().all(|&(_, y)| y == lines[0][0].1));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn deterministic_bytes() {
        let xs: Vec<f64> = (0..50).map(f64::from).collect();
        let s = vec![
            Series::new("a", xs.iter().map(|x| (x * 0.3).sin()).collect()),
            Series::new("b <&>", xs.iter().map(|x| 1e-3 + x * x).collect()),
        ];
        let labels = PlotLabels {
            title: "t".into(),
            x: "x".into(),
            y: "y".into(),
        };
        let a = emit_svg(&xs, &s, &labels, true).unwrap();
        let b = emit_svg(&xs, &s, &labels, true).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("b &lt;&amp;&gt;"));
        assert_eq!(polylines(&a).len(), 2);
    }

    #[test]
    fn rejects_empty_nan_and_ragged() {
        let l = PlotLabels::default();
        assert!(emit_svg(&[1.0], &[], &l, false).unwrap_err().is_usage());
        let e = emit_svg(
            &[1.0, 2.0, 3.0],
            &[Series::new("s", vec![1.0, 2.0, f64::NAN])],
            &l,
            false,
        )
        .unwrap_err();
        assert!(e.is_usage());
        assert!(e.to_string().contains("index 2"), "{e}");
        assert!(emit_svg(&[1.0, 2.0], &[Series::new("s", vec![1.0])], &l, false).is_err());
    }

    #[test]
    fn log_scale_handles_zeros() {
        let svg = emit_svg(
            &[0.0, 1.0],
            &[Series::new("z", vec![0.0, 1e-3])],
            &PlotLabels::default(),
            true,
        )
        .unwrap();
        assert_eq!(polylines(&svg)[0].len(), 2);
    }
}
