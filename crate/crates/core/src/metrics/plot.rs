//! Dependency-free PNG line chart for rate-distortion sweeps.
//!
//! Each metric series is normalized to its own range; the legend lists the
//! series name with its min..max so absolute values stay readable.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::metrics::RDPoint;

const WIDTH: u32 = 720;
const HEIGHT: u32 = 480;
const MARGIN_L: i64 = 60;
const MARGIN_R: i64 = 20;
const MARGIN_T: i64 = 20;
const MARGIN_B: i64 = 50;

const SERIES_COLORS: [Rgb<u8>; 5] = [
    Rgb([202, 52, 52]),   // l1
    Rgb([52, 101, 202]),  // l2
    Rgb([36, 140, 60]),   // psnr
    Rgb([170, 110, 20]),  // ssim
    Rgb([120, 60, 160]),  // ffd
];

// 5x7 glyphs, one bit per pixel, row-major from the top.
fn glyph(c: char) -> Option<[u8; 7]> {
    let rows = match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'f' => [0x06, 0x08, 0x08, 0x1E, 0x08, 0x08, 0x08],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x13, 0x0D],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'm' => [0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'p' => [0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E],
        't' => [0x08, 0x08, 0x1E, 0x08, 0x08, 0x09, 0x06],
        'o' => [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'k' => [0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12],
        ' ' => [0; 7],
        _ => return None,
    };
    Some(rows)
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..5 {
                    if (row >> (4 - dx)) & 1 == 1 {
                        put(img, cx + dx, y + dy as i64, color);
                    }
                }
            }
        }
        cx += 6;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
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

fn fmt_short(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 1000.0 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// Render the sweep to a PNG: token count on x, one normalized polyline per
/// metric.
pub fn plot_rd_curves(points: &[RDPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (x0, x1) = (MARGIN_L, WIDTH as i64 - MARGIN_R);
    let (y0, y1) = (HEIGHT as i64 - MARGIN_B, MARGIN_T);
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, x0, y0, x1, y0, axis);
    draw_line(&mut img, x0, y0, x0, y1, axis);

    let xs: Vec<f64> = points.iter().map(|p| p.n_tokens as f64).collect();
    let x_min = xs.first().copied().unwrap_or(0.0);
    let x_max = xs.last().copied().unwrap_or(1.0).max(x_min + 1.0);
    let to_px = |v: f64| x0 + ((v - x_min) / (x_max - x_min) * (x1 - x0) as f64) as i64;

    for p in points {
        let px = to_px(p.n_tokens as f64);
        draw_line(&mut img, px, y0, px, y0 + 4, axis);
        draw_text(&mut img, px - 6, y0 + 8, &p.n_tokens.to_string(), axis);
    }
    draw_text(&mut img, (x0 + x1) / 2 - 18, y0 + 24, "tokens", axis);

    let series: [(&str, Vec<f64>); 5] = [
        ("l1", points.iter().map(|p| p.l1).collect()),
        ("l2", points.iter().map(|p| p.l2).collect()),
        ("psnr", points.iter().map(|p| p.psnr).collect()),
        ("ssim", points.iter().map(|p| p.ssim).collect()),
        ("ffd", points.iter().filter_map(|p| p.ffd).collect()),
    ];

    let mut legend_y = y1 + 4;
    for (si, (name, values)) in series.iter().enumerate() {
        if values.len() != points.len() || values.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let color = SERIES_COLORS[si];
        let mut prev: Option<(i64, i64)> = None;
        for (p, &v) in points.iter().zip(values.iter()) {
            let px = to_px(p.n_tokens as f64);
            let py = y0 - (((v - lo) / span) * (y0 - y1 - 10) as f64) as i64;
            if let Some((ax, ay)) = prev {
                draw_line(&mut img, ax, ay, px, py, color);
            }
            draw_line(&mut img, px - 1, py, px + 1, py, color);
            draw_line(&mut img, px, py - 1, px, py + 1, color);
            prev = Some((px, py));
        }
        let label = format!("{name} {}..{}", fmt_short(lo), fmt_short(hi));
        draw_line(&mut img, x0 + 8, legend_y + 3, x0 + 24, legend_y + 3, color);
        draw_text(&mut img, x0 + 30, legend_y, &label, axis);
        legend_y += 12;
    }

    img.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rd.png");
        let points: Vec<RDPoint> = [1usize, 2, 4, 8]
            .iter()
            .map(|&n| RDPoint {
                n_tokens: n,
                payload_bytes: n * 3 / 2,
                l1: 0.2 / n as f64,
                l2: 0.05 / n as f64,
                psnr: 10.0 + n as f64,
                ssim: 1.0 - 0.5 / n as f64,
                ffd: Some(3.0 / n as f64),
            })
            .collect();
        plot_rd_curves(&points, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), WIDTH);
    }
}
