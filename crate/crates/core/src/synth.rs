//! Deterministic synthetic image corpus.
//!
//! Images combine a smooth two-tone gradient background (global, low-token
//! information) with a few solid shapes (localized detail), which gives a
//! graded information content: short prefixes can capture the palette,
//! longer ones the layout. Ten classes are defined by the background hue
//! family, so the corpus doubles as a labeled set for linear probing.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::ImageTensor;

pub const N_CLASSES: usize = 10;

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// One synthetic image of the given class (background hue family
/// `class / N_CLASSES`).
pub fn synth_image(rng: &mut ChaCha8Rng, size: usize, class: usize) -> ImageTensor {
    let base_hue = class as f32 / N_CLASSES as f32;
    let hue_a = base_hue + rng.random_range(-0.03..0.03);
    let hue_b = base_hue + rng.random_range(-0.03..0.03);
    let col_a = hsv_to_rgb(hue_a, rng.random_range(0.6..0.95), rng.random_range(0.7..1.0));
    let col_b = hsv_to_rgb(hue_b, rng.random_range(0.5..0.9), rng.random_range(0.2..0.5));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    let mut img = ImageTensor::zeros(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 / size as f32 - 0.5) * dx + (y as f32 / size as f32 - 0.5) * dy;
            let t = (u + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img.set(y, x, c, col_a[c] * (1.0 - t) + col_b[c] * t);
            }
        }
    }

    let n_shapes = rng.random_range(1..=3);
    for _ in 0..n_shapes {
        let col = hsv_to_rgb(rng.random_range(0.0..1.0), rng.random_range(0.5..1.0), rng.random_range(0.3..1.0));
        let cx = rng.random_range(0.15..0.85) * size as f32;
        let cy = rng.random_range(0.15..0.85) * size as f32;
        let r = rng.random_range(0.08..0.22) * size as f32;
        let circle = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let inside = if circle {
                    let (ddx, ddy) = (x as f32 - cx, y as f32 - cy);
                    ddx * ddx + ddy * ddy <= r * r
                } else {
                    (x as f32 - cx).abs() <= r && (y as f32 - cy).abs() <= r
                };
                if inside {
                    for c in 0..3 {
                        img.set(y, x, c, col[c]);
                    }
                }
            }
        }
    }
    img
}

/// Generate `count` images with round-robin class labels.
pub fn corpus(seed: u64, size: usize, count: usize) -> Vec<(ImageTensor, usize)> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|i| {
            let class = i % N_CLASSES;
            (synth_image(&mut rng, size, class), class)
        })
        .collect()
}

/// Write a flat directory of PNGs: `img_00000.png`, ...
pub fn write_flat_corpus(dir: impl AsRef<Path>, seed: u64, size: usize, count: usize) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (i, (img, _)) in corpus(seed, size, count).iter().enumerate() {
        img.save(dir.join(format!("img_{i:05}.png")))?;
    }
    Ok(())
}

/// Write a labeled directory tree: `class_0/img_00000.png`, ...
pub fn write_labeled_corpus(
    dir: impl AsRef<Path>,
    seed: u64,
    size: usize,
    per_class: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    if per_class == 0 {
        return Err(Error::invalid_input("per_class must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    for class in 0..N_CLASSES {
        let sub = dir.join(format!("class_{class}"));
        std::fs::create_dir_all(&sub)?;
        for i in 0..per_class {
            let img = synth_image(&mut rng, size, class);
            img.save(sub.join(format!("img_{i:05}.png")))?;
        }
    }
    Ok(())
}
