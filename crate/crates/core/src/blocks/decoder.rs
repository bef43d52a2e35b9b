use crate::blocks::layers::{Builder, ResidualBlock};
use crate::error::{Error, Result};
use crate::ops::tape::{Graph, Var};
use crate::tensor::Scalar;

/// Upsample 2x, concatenate the skip features, then two residual blocks.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub res1: ResidualBlock,
    pub res2: ResidualBlock,
}

impl DecoderBlock {
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        skip_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            res1: ResidualBlock::new(b, &format!("{name}.res1"), in_channels + skip_channels, out_channels, 1)?,
            res2: ResidualBlock::new(b, &format!("{name}.res2"), out_channels, out_channels, 1)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, skip: Var) -> Result<Var> {
        let up = g.upsample2x(x)?;
        let (us, ss) = (g.value(up).shape(), g.value(skip).shape());
        if (us.n, us.h, us.w) != (ss.n, ss.h, ss.w) {
            return Err(Error::ShapeMismatch {
                op: "decoder_block",
                left: us,
                right: ss,
            });
        }
        let cat = g.concat(&[up, skip])?;
        let y = self.res1.forward(g, cat)?;
        self.res2.forward(g, y)
    }
}
