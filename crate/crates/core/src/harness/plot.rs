use std::fmt::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::TraceRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
/// Values at or below this are drawn on the floor of the log axis.
const FLOOR: f64 = 1e-16;

const SERIES: [(&str, &str); 4] = [("L0", "#1f77b4"), ("L2", "#ff7f0e"), ("L4", "#2ca02c"), ("L6", "#d62728")];

fn values(r: &TraceRecord) -> [f64; 4] {
    [r.l0, r.l2, r.l4, r.l6]
}

/// Log-y line plot of L0, L2, L4, L6 against iteration.
pub fn render_loss_plot(trace: &[TraceRecord], path: &Path) -> Result<()> {
    render_scaled(trace, [1.0; 4], path)
}

/// As [`render_loss_plot`] with each series divided by `scale[k]`.
pub(crate) fn render_scaled(trace: &[TraceRecord], scale: [f64; 4], path: &Path) -> Result<()> {
    let svg = render_loss_svg(trace, scale)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

pub fn render_loss_svg(trace: &[TraceRecord], scale: [f64; 4]) -> Result<String> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot plot an empty trace"));
    }
    let pts: Vec<(f64, [f64; 4])> = trace
        .iter()
        .map(|r| {
            let v = values(r);
            let mut out = [0.0; 4];
            for k in 0..4 {
                let y = v[k] / scale[k];
                out[k] = if y.is_finite() && y > FLOOR { y.log10() } else { FLOOR.log10() };
            }
            (r.iter as f64, out)
        })
        .collect();
    let x_min = pts.first().map(|p| p.0).unwrap_or(0.0);
    let mut x_max = pts.iter().map(|p| p.0).fold(x_min, f64::max);
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let all = pts.iter().flat_map(|p| p.1);
    let lo = all.clone().fold(f64::INFINITY, f64::min).floor();
    let mut hi = all.fold(f64::NEG_INFINITY, f64::max).ceil();
    if hi <= lo {
        hi = lo + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| TOP + (hi - y) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    // Decade grid on the y axis.
    let mut e = lo;
    while e <= hi {
        let y = sy(e);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            e as i64
        );
        e += 1.0;
    }
    for k in 0..=4 {
        let x = x_min + (x_max - x_min) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            TOP + ph + 18.0,
            x.round() as i64
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    for (k, (name, color)) in SERIES.iter().enumerate() {
        if pts.len() == 1 {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(pts[0].0),
                sy(pts[0].1[k])
            );
        } else {
            let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1[k]))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: usize, v: f64) -> TraceRecord {
        TraceRecord {
            iter,
            stage: 1,
            emp_loss: v,
            l0: v,
            l1: 0.0,
            l2: v * 2.0,
            l4: v * 3.0,
            l6: 0.0,
            tail: 0.0,
            max_norm_sq: 1.0,
            frac_truncated: 0.0,
        }
    }

    #[test]
    fn single_row_has_markers() {
        let svg = render_loss_svg(&[rec(0, 0.5)], [1.0; 4]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.starts_with("<?xml") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn deterministic_and_nonempty() {
        let t: Vec<_> = (0..10).map(|i| rec(i * 10, 1.0 / (i + 1) as f64)).collect();
        assert_eq!(render_loss_svg(&t, [1.0; 4]).unwrap(), render_loss_svg(&t, [1.0; 4]).unwrap());
        assert_eq!(render_loss_svg(&t, [1.0; 4]).unwrap().matches("<polyline").count(), 4);
        assert!(render_loss_svg(&[], [1.0; 4]).is_err());
    }
}
