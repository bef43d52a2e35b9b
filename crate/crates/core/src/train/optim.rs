//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: OptimizerConfig,
    pub lr: f64,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            lr: cfg.lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every trainable parameter in `store`. Parameters with
    /// no entry in `grads` are updated with a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        let clip = match self.cfg.grad_clip {
            Some(max_norm) => {
                let norm = grads
                    .values()
                    .flat_map(|g| g.data().iter())
                    .map(|&v| f64::from(v) * f64::from(v))
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let (b1, b2, eps, lr) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in store.params_mut() {
            let shape = p.shape();
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(shape));
            let g = grads.get(name);
            if let Some(g) = g {
                if g.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        left: shape,
                        right: g.shape(),
                    });
                }
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| f64::from(g.data()[i])) * clip;
                let mi = b1 * f64::from(md[i]) + (1.0 - b1) * gi;
                let vi = b2 * f64::from(vd[i]) + (1.0 - b2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                pd[i] = (f64::from(pd[i]) - update) as f32;
            }
        }
        Ok(())
    }
}
