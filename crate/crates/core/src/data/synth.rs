//! Synthetic segmentation corpus: textured backgrounds with one to three
//! smooth-edged foreground blobs.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const MIN_FRACTION: f64 = 0.01;
pub const MAX_FRACTION: f64 = 0.6;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Polygon { cy: f64, cx: f64, radii: [f64; 8], count: usize, phase: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let cy = rng.random_range(0.15..0.85) * size;
        let cx = rng.random_range(0.15..0.85) * size;
        if rng.random_bool(0.5) {
            Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(0.08..0.3) * size,
                rx: rng.random_range(0.08..0.3) * size,
                angle: rng.random_range(0.0..PI),
            }
        } else {
            let mut radii = [0.0; 8];
            let base = rng.random_range(0.1..0.28) * size;
            for r in &mut radii {
                *r = base * rng.random_range(0.7..1.3);
            }
            Shape::Polygon {
                cy,
                cx,
                radii,
                count: rng.random_range(5..=8),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon {
                cy,
                cx,
                radii,
                count,
                phase,
            } => {
                let vertex = |k: usize| {
                    let a = phase + 2.0 * PI * k as f64 / count as f64;
                    (cy + radii[k] * a.sin(), cx + radii[k] * a.cos())
                };
                // Star-shaped around the center: inside iff inside one fan triangle.
                (0..count).any(|k| {
                    let (ay, ax) = vertex(k);
                    let (by, bx) = vertex((k + 1) % count);
                    in_triangle((y, x), (cy, cx), (ay, ax), (by, bx))
                })
            }
        }
    }
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| (u.1 - o.1) * (v.0 - o.0) - (u.0 - o.0) * (v.1 - o.1);
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// 3x3 box blur with edge clamping.
fn blur(src: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let y = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                    let x = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                    acc += src[y * w + x];
                }
            }
            out[i * w + j] = acc / 9.0;
        }
    }
    out
}

fn draw_mask(rng: &mut ChaCha8Rng, size: usize) -> Vec<f32> {
    let blobs = rng.random_range(1..=3);
    let shapes: Vec<Shape> = (0..blobs).map(|_| Shape::random(rng, size as f64)).collect();
    let mut mask = vec![0.0f32; size * size];
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            if shapes.iter().any(|s| s.contains(y, x)) {
                mask[i * size + j] = 1.0;
            }
        }
    }
    mask
}

/// One sample, deterministic in `(seed, index)`.
pub fn synth_sample(index: usize, size: usize, seed: u64) -> Result<Sample> {
    let mut rng = rng::stream(seed, &[b"synth", &(index as u64).to_le_bytes()]);
    let plane = size * size;
    let mask = (0..MAX_ATTEMPTS)
        .map(|_| draw_mask(&mut rng, size))
        .find(|m| {
            let frac = m.iter().sum::<f32>() as f64 / plane as f64;
            (MIN_FRACTION..=MAX_FRACTION).contains(&frac)
        })
        .ok_or_else(|| Error::InvalidArgument(format!("size {size} cannot satisfy the mask fraction bounds")))?;

    let base: [f32; 3] = [
        rng.random_range(0.45..0.65),
        rng.random_range(0.2..0.35),
        rng.random_range(0.15..0.3),
    ];
    let shift: [f32; 3] = [
        rng.random_range(0.2..0.35),
        rng.random_range(0.25..0.4),
        rng.random_range(0.05..0.2),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.08),
                rng.random_range(0.5..4.0) * 2.0 * PI / size as f64,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..PI),
            )
        })
        .collect();
    let soft = blur(&mask, size, size);
    let mut image = vec![0.0f32; 3 * plane];
    for i in 0..size {
        for j in 0..size {
            let mut tex = 0.0;
            for &(amp, freq, phase, dir) in &waves {
                let t = (i as f64) * dir.sin() + (j as f64) * dir.cos();
                tex += amp * (freq * t + phase).sin();
            }
            let k = i * size + j;
            for c in 0..3 {
                let noise = rng.random_range(-0.04f32..0.04);
                let v = base[c] + tex as f32 + noise + shift[c] * soft[k];
                image[c * plane + k] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Sample {
        id: format!("synth_{index:05}"),
        image: Tensor::from_values((1, 3, size, size), image)?,
        mask: Tensor::from_values((1, 1, size, size), mask)?,
    })
}

pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::InvalidArgument(format!("synthetic size {size} must be a positive multiple of 16")));
    }
    (0..n).map(|i| synth_sample(i, size, seed)).collect()
}
