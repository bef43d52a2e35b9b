//! Combined binary cross-entropy and soft Dice loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
    /// Additive smoothing in the soft Dice ratio.
    pub dice_smooth: f64,
    /// Predictions are clamped to `[clamp, 1 - clamp]` inside the logarithms.
    pub clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bce_weight: 1.0,
            dice_weight: 1.0,
            dice_smooth: 1.0,
            clamp: 1e-7,
        }
    }
}

fn validate<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    pred.expect_same_shape(target, "bce_dice_loss")?;
    if let Some(bad) = target
        .data()
        .iter()
        .find(|&&t| t != T::zero() && t != T::one())
    {
        return Err(Error::InvalidArgument(format!(
            "bce_dice_loss: target must be binary, found {bad}"
        )));
    }
    Ok(())
}

/// Individual loss terms, accumulated in `f64` over the whole batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub bce: f64,
    pub dice: f64,
}

impl LossTerms {
    pub fn total(&self, cfg: &LossConfig) -> f64 {
        cfg.bce_weight * self.bce + cfg.dice_weight * self.dice
    }
}

pub fn bce_dice_terms<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    validate(pred, target)?;
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    let mut bce = 0.0;
    let (mut inter, mut psum, mut tsum) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let (p, t) = (p.as_f64(), t.as_f64());
        let pc = p.clamp(lo, hi);
        bce -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        inter += p * t;
        psum += p;
        tsum += t;
    }
    let m = pred.numel().max(1) as f64;
    let eps = cfg.dice_smooth;
    Ok(LossTerms {
        bce: bce / m,
        dice: 1.0 - (2.0 * inter + eps) / (psum + tsum + eps),
    })
}

pub fn bce_dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    Ok(bce_dice_terms(pred, target, cfg)?.total(cfg))
}

/// Gradient of the loss with respect to `pred`, scaled by `upstream`.
/// The clamp has zero derivative outside its range.
pub fn bce_dice_backward<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &LossConfig,
    upstream: f64,
) -> Result<Tensor<T>> {
    validate(pred, target)?;
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    let (mut inter, mut psum, mut tsum) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let (p, t) = (p.as_f64(), t.as_f64());
        inter += p * t;
        psum += p;
        tsum += t;
    }
    let m = pred.numel().max(1) as f64;
    let eps = cfg.dice_smooth;
    let denom = psum + tsum + eps;
    let numer = 2.0 * inter + eps;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (p, t) = (p.as_f64(), t.as_f64());
            let dbce = if p < lo || p > hi {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / m
            };
            let ddice = -(2.0 * t * denom - numer) / (denom * denom);
            T::of(upstream * (cfg.bce_weight * dbce + cfg.dice_weight * ddice))
        })
        .collect();
    Tensor::from_values(pred.shape(), data)
}
