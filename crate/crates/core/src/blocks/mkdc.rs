//! Multiple kernel dilated convolution block.
//!
//! ```text
//! x -> [k1 | k3 | k7 | k11] conv-BN-ReLU -> concat
//!   -> [d1 | d3 | d7 | d11] 3x3 dilated conv-BN-ReLU -> concat
//!   -> 1x1 conv -> + 1x1 projection of x -> channel attention -> spatial attention
//! ```

use serde::{Deserialize, Serialize};

use crate::blocks::attention::{AttentionConfig, ChannelAttention, SpatialAttention};
use crate::blocks::layers::{Builder, Conv2d, ConvBnRelu};
use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::tape::{Graph, Var};
use crate::tensor::Scalar;

pub const KERNEL_SIZES: [usize; 4] = [1, 3, 7, 11];
pub const DILATION_RATES: [usize; 4] = [1, 3, 7, 11];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MkdcConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_sizes: [usize; 4],
    pub dilation_rates: [usize; 4],
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
}

impl MkdcConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_sizes: KERNEL_SIZES,
            dilation_rates: DILATION_RATES,
            attention_reduction: 8,
            spatial_kernel: 7,
        }
    }

    pub fn with_reduction(mut self, r: usize) -> Self {
        self.attention_reduction = r;
        self
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            channels: self.out_channels,
            reduction: self.attention_reduction,
            spatial_kernel: self.spatial_kernel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mkdc {
    pub kernel_branches: Vec<ConvBnRelu>,
    pub dilated_branches: Vec<ConvBnRelu>,
    pub fuse: Conv2d,
    pub projection: Conv2d,
    pub channel_attention: ChannelAttention,
    pub spatial_attention: SpatialAttention,
}

impl Mkdc {
    pub fn new(b: &mut Builder<'_>, name: &str, cfg: &MkdcConfig) -> Result<Self> {
        if cfg.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "{name}: kernel sizes {:?} must be odd",
                cfg.kernel_sizes
            )));
        }
        let out = cfg.out_channels;
        let kernel_branches = cfg
            .kernel_sizes
            .iter()
            .map(|&k| ConvBnRelu::new(b, &format!("{name}.k{k}"), cfg.in_channels, out, k, 1))
            .collect::<Result<Vec<_>>>()?;
        let branch_total = out * cfg.kernel_sizes.len();
        let dilated_branches = cfg
            .dilation_rates
            .iter()
            .map(|&d| ConvBnRelu::dilated(b, &format!("{name}.d{d}"), branch_total, out, d))
            .collect::<Result<Vec<_>>>()?;
        let pointwise = ConvGeom::new(1, 0, 1);
        let fuse = b.conv(
            &format!("{name}.fuse"),
            out * cfg.dilation_rates.len(),
            out,
            1,
            pointwise,
            true,
        )?;
        let projection = b.conv(&format!("{name}.proj"), cfg.in_channels, out, 1, pointwise, true)?;
        let att = cfg.attention();
        Ok(Self {
            kernel_branches,
            dilated_branches,
            fuse,
            projection,
            channel_attention: ChannelAttention::new(b, &format!("{name}.ca"), &att)?,
            spatial_attention: SpatialAttention::new(b, &format!("{name}.sa"), &att)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.fuse.out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.kernel_branches.len());
        for branch in &self.kernel_branches {
            parts.push(branch.forward(g, x)?);
        }
        let multi = g.concat(&parts)?;
        parts.clear();
        for branch in &self.dilated_branches {
            parts.push(branch.forward(g, multi)?);
        }
        let dilated = g.concat(&parts)?;
        let fused = self.fuse.forward(g, dilated)?;
        let shortcut = self.projection.forward(g, x)?;
        let y = g.add(fused, shortcut)?;
        let y = self.channel_attention.forward(g, y)?;
        self.spatial_attention.forward(g, y)
    }
}
