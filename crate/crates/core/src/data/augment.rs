//! Online augmentation: rotation, flips and coarse dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseDropout {
    pub max_holes: usize,
    pub max_h: usize,
    pub max_w: usize,
    pub p: f64,
    /// Also zero the mask under each hole.
    pub apply_to_mask: bool,
}

impl Default for CoarseDropout {
    fn default() -> Self {
        Self {
            max_holes: 8,
            max_h: 32,
            max_w: 32,
            p: 0.5,
            apply_to_mask: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Angles are drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: f64,
    pub p_rotate: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub coarse_dropout: CoarseDropout,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_degrees: 45.0,
            p_rotate: 0.5,
            p_hflip: 0.5,
            p_vflip: 0.5,
            coarse_dropout: CoarseDropout::default(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All probabilities zero and no rotation range.
    pub fn identity() -> Self {
        Self {
            rotation_degrees: 0.0,
            p_rotate: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            coarse_dropout: CoarseDropout {
                p: 0.0,
                ..CoarseDropout::default()
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_rotate", self.p_rotate),
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("coarse_dropout.p", self.coarse_dropout.p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !self.rotation_degrees.is_finite() || self.rotation_degrees < 0.0 {
            return Err(Error::Config(format!(
                "rotation_degrees {} must be finite and non-negative",
                self.rotation_degrees
            )));
        }
        let d = &self.coarse_dropout;
        if d.p > 0.0 && (d.max_holes == 0 || d.max_h == 0 || d.max_w == 0) {
            return Err(Error::Config("coarse dropout needs positive holes and hole sizes".into()));
        }
        Ok(())
    }
}

/// Rotates every plane by `degrees` counter-clockwise about the image center
/// with zero fill. `bilinear` selects interpolation, otherwise nearest.
pub fn rotate(x: &Tensor<f32>, degrees: f64, bilinear: bool) -> Tensor<f32> {
    let s = x.shape();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (s.h as f64 - 1.0) / 2.0;
    let cx = (s.w as f64 - 1.0) / 2.0;
    let mut out = Tensor::zeros(s);
    let get = |plane: &[f32], y: i64, x: i64| -> f32 {
        if y < 0 || x < 0 || y >= s.h as i64 || x >= s.w as i64 {
            0.0
        } else {
            plane[y as usize * s.w + x as usize]
        }
    };
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c).to_vec();
            let dst = out.plane_mut(n, c);
            for i in 0..s.h {
                for j in 0..s.w {
                    let dy = i as f64 - cy;
                    let dx = j as f64 - cx;
                    let sx = cos * dx - sin * dy + cx;
                    let sy = sin * dx + cos * dy + cy;
                    dst[i * s.w + j] = if bilinear {
                        let x0 = sx.floor();
                        let y0 = sy.floor();
                        let fx = (sx - x0) as f32;
                        let fy = (sy - y0) as f32;
                        let (x0, y0) = (x0 as i64, y0 as i64);
                        let a = get(&src, y0, x0);
                        let b = get(&src, y0, x0 + 1);
                        let c0 = get(&src, y0 + 1, x0);
                        let d = get(&src, y0 + 1, x0 + 1);
                        let top = a + fx * (b - a);
                        let bot = c0 + fx * (d - c0);
                        top + fy * (bot - top)
                    } else {
                        get(&src, sy.round() as i64, sx.round() as i64)
                    };
                }
            }
        }
    }
    out
}

pub fn hflip(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| x.at(n, c, h, s.w - 1 - w))
}

pub fn vflip(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| x.at(n, c, s.h - 1 - h, w))
}

/// Zeroes the rectangle `[y, y+h) x [x, x+w)` in every plane.
pub fn zero_rect(t: &mut Tensor<f32>, y: usize, x: usize, h: usize, w: usize) {
    let s = t.shape();
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = t.plane_mut(n, c);
            for row in y..(y + h).min(s.h) {
                plane[row * s.w + x..row * s.w + (x + w).min(s.w)].fill(0.0);
            }
        }
    }
}

/// Augments one sample. The random stream depends only on the config seed,
/// the epoch and the sample id, so results do not depend on call order.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, epoch: u64) -> Sample {
    let mut rng = rng::stream(cfg.seed, &[b"augment", &epoch.to_le_bytes(), sample.id.as_bytes()]);
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if rng.random_bool(cfg.p_rotate) && cfg.rotation_degrees > 0.0 {
        let angle = rng.random_range(-cfg.rotation_degrees..=cfg.rotation_degrees);
        image = rotate(&image, angle, true);
        mask = rotate(&mask, angle, false);
    }
    if rng.random_bool(cfg.p_hflip) {
        image = hflip(&image);
        mask = hflip(&mask);
    }
    if rng.random_bool(cfg.p_vflip) {
        image = vflip(&image);
        mask = vflip(&mask);
    }
    let d = &cfg.coarse_dropout;
    if rng.random_bool(d.p) {
        let s = image.shape();
        let holes = rng.random_range(1..=d.max_holes);
        for _ in 0..holes {
            let h = rng.random_range(1..=d.max_h.min(s.h));
            let w = rng.random_range(1..=d.max_w.min(s.w));
            let y = rng.random_range(0..=s.h - h);
            let x = rng.random_range(0..=s.w - w);
            zero_rect(&mut image, y, x, h, w);
            if d.apply_to_mask {
                zero_rect(&mut mask, y, x, h, w);
            }
        }
    }
    Sample {
        id: sample.id.clone(),
        image,
        mask,
    }
}
