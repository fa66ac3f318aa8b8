//! Loss-curve images: one PNG per logged term, raw values in a light trace
//! and a trailing moving average on top.

use std::path::{Path, PathBuf};

use crate::error::{invalid, io_err, Result};
use crate::grid::ImageGrid;
use crate::imageio::write_png;
use crate::objectives::{LogRecord, REPORT_TERMS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotStyle {
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    /// Window of the trailing moving average, in iterations.
    pub smoothing: usize,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self { width: 480, height: 240, margin: 12, smoothing: 50 }
    }
}

const AXIS: [f64; 3] = [0.55, 0.55, 0.55];
const RAW: [f64; 3] = [0.72, 0.80, 0.93];
const SMOOTH: [f64; 3] = [0.05, 0.20, 0.55];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![1.0; w * h * 3] }
    }

    fn set(&mut self, x: i64, y: i64, color: [f64; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&color);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [f64; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn into_image(self) -> Result<ImageGrid> {
        ImageGrid::new(self.w, self.h, 3, self.px)
    }
}

/// Trailing mean over at most `window` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Render one series against iteration numbers.
pub fn render_curve(iterations: &[u64], values: &[f64], style: &PlotStyle) -> Result<ImageGrid> {
    if iterations.len() != values.len() || values.is_empty() {
        return Err(invalid("a curve needs equally many, and at least one, iteration and value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("cannot plot non-finite loss values"));
    }
    let m = style.margin;
    if style.width <= 2 * m + 1 || style.height <= 2 * m + 1 {
        return Err(invalid("plot is too small for its margin"));
    }
    let mut c = Canvas::new(style.width, style.height);
    let (x_lo, x_hi) = (iterations[0] as f64, *iterations.last().unwrap() as f64);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (pw, ph) = ((style.width - 2 * m - 1) as f64, (style.height - 2 * m - 1) as f64);
    let map = |it: u64, v: f64| -> (i64, i64) {
        let fx = if x_hi > x_lo { (it as f64 - x_lo) / (x_hi - x_lo) } else { 0.5 };
        let fy = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        ((m as f64 + fx * pw).round() as i64, (m as f64 + (1.0 - fy) * ph).round() as i64)
    };
    let (left, right, top, bottom) = (m as i64, (style.width - m - 1) as i64, m as i64, (style.height - m - 1) as i64);
    c.line((left, bottom), (right, bottom), AXIS);
    c.line((left, top), (left, bottom), AXIS);
    for (series, color) in [(values.to_vec(), RAW), (moving_average(values, style.smoothing), SMOOTH)] {
        let mut prev = map(iterations[0], series[0]);
        for (&it, &v) in iterations.iter().zip(&series).skip(1) {
            let p = map(it, v);
            c.line(prev, p, color);
            prev = p;
        }
        if series.len() == 1 {
            c.set(prev.0, prev.1, color);
        }
    }
    c.into_image()
}

/// Write `loss_<term>.png` for every report term and the total into `out_dir`.
pub fn plot_losses(records: &[LogRecord], out_dir: &Path, style: &PlotStyle) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(invalid("loss log has no records"));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let iterations: Vec<u64> = records.iter().map(|r| r.iteration).collect();
    let mut written = Vec::new();
    let names = REPORT_TERMS.iter().copied().chain(["total"]);
    for (i, name) in names.enumerate() {
        let values: Vec<f64> =
            records.iter().map(|r| if i < REPORT_TERMS.len() { r.report.terms()[i].1 } else { r.report.total }).collect();
        let path = out_dir.join(format!("loss_{name}.png"));
        write_png(&path, &render_curve(&iterations, &values, style)?)?;
        written.push(path);
    }
    Ok(written)
}
