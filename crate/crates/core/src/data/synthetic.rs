//! Procedural image sources and the stand-in transforms.
//!
//! Images are produced in `[0, 1]` RGB, channel-major `(3, size, size)`, and
//! normalized to `[-1, 1]` by the caller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::mix;

pub const SHAPE_CLASSES: usize = 10;

const SUPERSAMPLE: usize = 3;

/// Global transform that turns a base subset into the target-feature dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandInStyle {
    /// Compresses dynamic range toward one washed-out dominant hue per image.
    Recolor,
    /// Overlays a fine diagonal stripe texture.
    Texture,
    /// `1 - x` in `[0, 1]` space.
    Invert,
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn inside(class: usize, x: f32, y: f32) -> bool {
    match class {
        0 => x * x + y * y <= 1.0,
        1 => x.abs().max(y.abs()) <= 0.8,
        2 => (-0.8..=0.8).contains(&y) && x.abs() <= (y + 0.8) * 0.6,
        3 => {
            let r2 = x * x + y * y;
            (0.36..=1.0).contains(&r2)
        }
        4 => (x.abs() <= 0.28 && y.abs() <= 1.0) || (y.abs() <= 0.28 && x.abs() <= 1.0),
        5 => x.abs() <= 1.0 && y.abs() <= 1.0 && (((y + 1.0) / 0.4).floor() as i32) % 2 == 0,
        6 => x.abs() <= 1.0 && y.abs() <= 1.0 && (((x + 1.0) / 0.4).floor() as i32) % 2 == 0,
        7 => x.abs() <= 1.0 && y.abs() <= 1.0 && ((x - y).abs() <= 0.32 || (x + y).abs() <= 0.32),
        8 => x.abs() + y.abs() <= 1.0,
        _ => {
            let a = (x - 0.55) * (x - 0.55) + y * y;
            let b = (x + 0.55) * (x + 0.55) + y * y;
            a <= 0.18 || b <= 0.18
        }
    }
}

/// One geometric primitive of style `class % 10` on a dark background.
pub fn draw_shape(seed: u64, id: u64, class: usize, size: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, id));
    let class = class % SHAPE_CLASSES;
    let radius: f32 = rng.random_range(0.45..0.7);
    let slack = 1.0 - radius;
    let cx: f32 = rng.random_range(-slack..slack) * 0.6;
    let cy: f32 = rng.random_range(-slack..slack) * 0.6;
    let fg = hsv(rng.random(), rng.random_range(0.6..1.0), rng.random_range(0.8..1.0));
    let bg = hsv(rng.random(), rng.random_range(0.2..0.6), rng.random_range(0.05..0.3));

    let mut out = vec![0f32; 3 * size * size];
    let plane = size * size;
    let step = 2.0 / (size * SUPERSAMPLE) as f32;
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = -1.0 + ((px * SUPERSAMPLE + sx) as f32 + 0.5) * step;
                    let v = -1.0 + ((py * SUPERSAMPLE + sy) as f32 + 0.5) * step;
                    if inside(class, (u - cx) / radius, (v - cy) / radius) {
                        hits += 1;
                    }
                }
            }
            let cov = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            for c in 0..3 {
                out[c * plane + py * size + px] = bg[c] + (fg[c] - bg[c]) * cov;
            }
        }
    }
    out
}

/// Oriented two-colour sinusoidal grating; the class selects the orientation.
pub fn draw_grating(seed: u64, id: u64, class: usize, class_count: usize, size: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x6772_6174, id));
    let angle = std::f32::consts::PI * class as f32 / class_count.max(1) as f32;
    let cycles: f32 = rng.random_range(1.5..3.0);
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let c1 = hsv(rng.random(), rng.random_range(0.5..1.0), rng.random_range(0.7..1.0));
    let c2 = hsv(rng.random(), rng.random_range(0.3..0.8), rng.random_range(0.1..0.4));
    let (s, c) = angle.sin_cos();
    let plane = size * size;
    let mut out = vec![0f32; 3 * plane];
    for py in 0..size {
        for px in 0..size {
            let u = px as f32 / size as f32;
            let v = py as f32 / size as f32;
            let w = 0.5 + 0.5 * (std::f32::consts::TAU * cycles * (u * c + v * s) + phase).sin();
            for ch in 0..3 {
                out[ch * plane + py * size + px] = c2[ch] + (c1[ch] - c2[ch]) * w;
            }
        }
    }
    out
}

fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Applies a stand-in transform in place to a `(3, size, size)` image in `[0, 1]`.
pub fn apply_style(style: StandInStyle, seed: u64, id: u64, img: &mut [f32], size: usize) {
    let plane = size * size;
    match style {
        StandInStyle::Recolor => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x7265_636f, id));
            let tint = hsv(rng.random(), 0.35, 0.9);
            for i in 0..plane {
                let l = luminance(img[i], img[plane + i], img[2 * plane + i]);
                for c in 0..3 {
                    img[c * plane + i] = tint[c] * (0.55 + 0.3 * l) + 0.08;
                }
            }
        }
        StandInStyle::Texture => {
            for py in 0..size {
                for px in 0..size {
                    let t = 0.15 * (std::f32::consts::TAU * (px + py) as f32 / 3.0).sin();
                    for c in 0..3 {
                        let v = &mut img[c * plane + py * size + px];
                        *v = (*v + t).clamp(0.0, 1.0);
                    }
                }
            }
        }
        StandInStyle::Invert => {
            for v in img.iter_mut() {
                *v = 1.0 - *v;
            }
        }
    }
}

/// Collapses RGB to one luminance channel.
pub fn to_gray(img: &[f32], size: usize) -> Vec<f32> {
    let plane = size * size;
    (0..plane)
        .map(|i| luminance(img[i], img[plane + i], img[2 * plane + i]))
        .collect()
}
