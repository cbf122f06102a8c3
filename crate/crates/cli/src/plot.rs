//! File-based plots: SVG line charts and PNG frame grids.

use std::fmt::Write as _;
use std::path::Path;

use armacell::Tensor;

use crate::data::write_file;
use crate::error::{CliError, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Line chart of named series against their index, optionally with dashed
/// horizontal reference lines (one per series, same colour).
pub fn line_chart(
    title: &str,
    x_label: &str,
    series: &[(String, Vec<f64>)],
    references: &[Option<f64>],
) -> String {
    let (w, h, left, right, top, bottom) = (800.0, 450.0, 60.0, 160.0, 40.0, 40.0);
    let finite = |v: &&f64| v.is_finite();
    let all = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .chain(references.iter().flatten())
        .filter(finite);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let px = |i: usize| left + (w - left - right) * i as f64 / (n - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        (w - right + left) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for (v, y) in [(hi, top), (lo, h - bottom)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#,
            left - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{} (0..{})</text>"#,
        (w - right + left) / 2.0,
        h - 12.0,
        escape(x_label),
        n - 1
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        if let Some(Some(r)) = references.get(k) {
            let _ = writeln!(
                s,
                r#"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="{colour}" stroke-dasharray="5,4"/>"#,
                w - right,
                y = py(*r)
            );
        }
        let (lx, ly) = (w - right + 10.0, top + 16.0 * k as f64 + 8.0);
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn write_line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    series: &[(String, Vec<f64>)],
    references: &[Option<f64>],
) -> Result<()> {
    write_file(path, line_chart(title, x_label, series, references))
}

/// Grayscale grid: one row per entry of `rows`, each a list of `[H×W×C]`
/// frames (first channel shown, values clamped to [0, 1]), separated by
/// 2-pixel gutters.
pub fn frame_grid_png(path: &Path, rows: &[Vec<Tensor>]) -> Result<()> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| CliError::Config("no frames to plot".into()))?;
    let (fh, fw) = (first.shape()[0], first.shape()[1]);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let gap = 2;
    let width = cols * fw + (cols + 1) * gap;
    let height = rows.len() * fh + (rows.len() + 1) * gap;
    let mut img = vec![128u8; width * height];
    for (r, frames) in rows.iter().enumerate() {
        for (c, frame) in frames.iter().enumerate() {
            let channels = frame.shape()[2];
            for y in 0..fh {
                for x in 0..fw {
                    let v = frame.data()[(y * fw + x) * channels].clamp(0.0, 1.0);
                    let (iy, ix) = (gap + r * (fh + gap) + y, gap + c * (fw + gap) + x);
                    img[iy * width + ix] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| CliError::io(path, std::io::Error::other(e));
    enc.write_header()
        .map_err(to_io)?
        .write_image_data(&img)
        .map_err(to_io)
}
