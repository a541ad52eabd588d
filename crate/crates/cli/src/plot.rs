//! Static SVG convergence plot: mean curve, a +-1 std band and labeled axes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{io_err, HarnessError, Result};
use crate::experiment::Summary;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data values onto the vertical pixel axis, in log10 space when `log`.
struct YAxis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl YAxis {
    fn tr(&self, v: f64) -> f64 {
        if self.log {
            v.log10()
        } else {
            v
        }
    }

    fn new(log: bool, lo: f64, hi: f64) -> Self {
        let mut axis = YAxis {
            log,
            lo: 0.0,
            hi: 0.0,
        };
        let (mut a, mut b) = (axis.tr(lo), axis.tr(hi));
        if b - a <= f64::EPSILON * a.abs().max(1.0) {
            a -= 0.5;
            b += 0.5;
        }
        axis.lo = a;
        axis.hi = b;
        axis
    }

    fn px(&self, v: f64) -> f64 {
        let frac = (self.tr(v) - self.lo) / (self.hi - self.lo);
        TOP + (1.0 - frac) * (HEIGHT - TOP - BOTTOM)
    }

    fn tick_value(&self, i: usize) -> f64 {
        let u = self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64;
        if self.log {
            10f64.powf(u)
        } else {
            u
        }
    }
}

/// Renders the mean cumulative objective with a +-1 std band. The y axis is
/// logarithmic when every plotted mean is positive; the band is then clipped at
/// the smallest positive plotted value. Rows with a non-finite mean are skipped.
pub fn emit_plot(summary: &Summary, title: &str, path: &Path) -> Result<()> {
    let rows: Vec<_> = summary
        .rows
        .iter()
        .filter(|r| r.mean_cum_obj_mean.is_finite())
        .collect();
    if rows.is_empty() {
        return Err(HarnessError::InvalidInput(
            "nothing to plot: summary has no finite values".into(),
        ));
    }
    let std_of = |s: f64| if s.is_finite() { s } else { 0.0 };
    let log = rows.iter().all(|r| r.mean_cum_obj_mean > 0.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in &rows {
        let (m, s) = (r.mean_cum_obj_mean, std_of(r.mean_cum_obj_std));
        for v in [m, m - s, m + s] {
            if !log || v > 0.0 {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let y = YAxis::new(log, lo, hi);
    let x_max = rows.last().map_or(0, |r| r.iter).max(rows[0].iter + 1) as f64;
    let x_min = rows[0].iter as f64;
    let px_x = |it: usize| LEFT + (it as f64 - x_min) / (x_max - x_min) * (WIDTH - LEFT - RIGHT);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        TOP / 2.0 + 5.0,
        escape(title)
    );

    // band: upper edge left to right, lower edge right to left
    let mut band: Vec<String> = rows
        .iter()
        .map(|r| {
            let v = (r.mean_cum_obj_mean + std_of(r.mean_cum_obj_std)).min(hi);
            format!("{:.3},{:.3}", px_x(r.iter), y.px(v))
        })
        .collect();
    band.extend(rows.iter().rev().map(|r| {
        let v = (r.mean_cum_obj_mean - std_of(r.mean_cum_obj_std)).max(lo);
        format!("{:.3},{:.3}", px_x(r.iter), y.px(v))
    }));
    let _ = writeln!(
        svg,
        r#"<polygon id="std-band" points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#,
        band.join(" ")
    );
    let line: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.3},{:.3}", px_x(r.iter), y.px(r.mean_cum_obj_mean)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline id="mean" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        line.join(" ")
    );

    // axes and ticks
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for i in 0..TICKS {
        let it = x_min + (x_max - x_min) * i as f64 / (TICKS - 1) as f64;
        let px = LEFT + (it - x_min) / (x_max - x_min) * (WIDTH - LEFT - RIGHT);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.3}" y1="{y0}" x2="{px:.3}" y2="{}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.3}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            (it.round() as i64)
        );
        let v = y.tick_value(i);
        let py = y.px(v);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.3}" x2="{x0}" y2="{py:.3}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.3}" text-anchor="end">{v:.3e}</text>"#,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">optimization step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let scale = if log { " (log scale)" } else { "" };
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">cumulative objective{scale}</text>"#,
        (y0 + y1) / 2.0
    );
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(io_err(path))
}
