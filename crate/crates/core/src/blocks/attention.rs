//! Channel and spatial attention gates in the CBAM arrangement.

use serde::{Deserialize, Serialize};

use crate::blocks::layers::{Builder, Conv2d};
use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::pool::PoolKind;
use crate::ops::tape::{Graph, Var};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub channels: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
}

impl AttentionConfig {
    pub fn new(channels: usize, reduction: usize) -> Self {
        Self {
            channels,
            reduction,
            spatial_kernel: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.reduction == 0 {
            return Err(Error::Config("attention channels and reduction must be positive".into()));
        }
        if self.channels % self.reduction != 0 {
            return Err(Error::Config(format!(
                "attention: channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "attention: spatial kernel {} must be odd",
                self.spatial_kernel
            )));
        }
        Ok(())
    }
}

/// Shared two-layer map `C -> C/r -> C` applied to average- and max-pooled
/// channel descriptors; the summed responses pass through a sigmoid gate.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub squeeze: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = cfg.channels / cfg.reduction;
        let geom = ConvGeom::new(1, 0, 1);
        Ok(Self {
            squeeze: b.conv(&format!("{name}.squeeze"), cfg.channels, hidden, 1, geom, false)?,
            expand: b.conv(&format!("{name}.expand"), hidden, cfg.channels, 1, geom, false)?,
        })
    }

    fn shared_map<T: Scalar>(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Var> {
        let h = self.squeeze.forward(g, v)?;
        let h = g.relu(h);
        self.expand.forward(g, h)
    }

    pub fn gate<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let avg = g.pool(x, PoolKind::GlobalAvg)?;
        let max = g.pool(x, PoolKind::GlobalMax)?;
        let a = self.shared_map(g, avg)?;
        let m = self.shared_map(g, max)?;
        let s = g.add(a, m)?;
        Ok(g.sigmoid(s))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gate = self.gate(g, x)?;
        g.channel_gate(x, gate)
    }
}

/// Channel-wise mean and max maps, a `k x k` convolution, sigmoid gate.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.spatial_kernel;
        let geom = ConvGeom::new(1, (k - 1) / 2, 1);
        Ok(Self {
            conv: b.conv(&format!("{name}.conv"), 2, 1, k, geom, true)?,
        })
    }

    pub fn gate<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let avg = g.pool(x, PoolKind::ChannelAvg)?;
        let max = g.pool(x, PoolKind::ChannelMax)?;
        let both = g.concat(&[avg, max])?;
        let s = self.conv.forward(g, both)?;
        Ok(g.sigmoid(s))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gate = self.gate(g, x)?;
        g.spatial_gate(x, gate)
    }
}
