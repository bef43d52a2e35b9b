//! Multiscale feature fusion: the three decoder outputs are merged coarse to
//! fine with 2x bilinear upsampling, then refined by attention.

use crate::blocks::attention::{AttentionConfig, ChannelAttention, SpatialAttention};
use crate::blocks::layers::{Builder, ConvBnRelu};
use crate::error::{Error, Result};
use crate::ops::tape::{Graph, Var};
use crate::tensor::Scalar;

#[derive(Debug, Clone)]
pub struct Msff {
    pub stage1: ConvBnRelu,
    pub stage2: ConvBnRelu,
    pub stage3: ConvBnRelu,
    pub channel_attention: ChannelAttention,
    pub spatial_attention: SpatialAttention,
}

impl Msff {
    /// `channels` are the widths of the 1/8, 1/4 and 1/2 scale inputs.
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        channels: [usize; 3],
        out_channels: usize,
        reduction: usize,
        spatial_kernel: usize,
    ) -> Result<Self> {
        let att = AttentionConfig {
            channels: out_channels,
            reduction,
            spatial_kernel,
        };
        Ok(Self {
            stage1: ConvBnRelu::new(b, &format!("{name}.stage1"), channels[0], out_channels, 3, 1)?,
            stage2: ConvBnRelu::new(
                b,
                &format!("{name}.stage2"),
                out_channels + channels[1],
                out_channels,
                3,
                1,
            )?,
            stage3: ConvBnRelu::new(
                b,
                &format!("{name}.stage3"),
                out_channels + channels[2],
                out_channels,
                3,
                1,
            )?,
            channel_attention: ChannelAttention::new(b, &format!("{name}.ca"), &att)?,
            spatial_attention: SpatialAttention::new(b, &format!("{name}.sa"), &att)?,
        })
    }

    fn join<T: Scalar>(g: &mut Graph<'_, T>, coarse: Var, fine: Var, op: &'static str) -> Result<Var> {
        let (a, b) = (g.value(coarse).shape(), g.value(fine).shape());
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::ShapeMismatch {
                op,
                left: a,
                right: b,
            });
        }
        g.concat(&[coarse, fine])
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, d1: Var, d2: Var, d3: Var) -> Result<Var> {
        let y = g.upsample2x(d1)?;
        let y = self.stage1.forward(g, y)?;
        let y = Self::join(g, y, d2, "msff_scale2")?;
        let y = g.upsample2x(y)?;
        let y = self.stage2.forward(g, y)?;
        let y = Self::join(g, y, d3, "msff_scale3")?;
        let y = g.upsample2x(y)?;
        let y = self.stage3.forward(g, y)?;
        let y = self.channel_attention.forward(g, y)?;
        self.spatial_attention.forward(g, y)
    }
}
