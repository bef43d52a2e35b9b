//! The full encoder-decoder network and its checkpoint container.
//!
//! ```text
//! x -> stem/2 -> f1 -> res/2 -> f2 -> res/2 -> f3 -> res/2 -> f4
//! f_i -> conv-BN-ReLU to trunk width -> MKDC -> m_i
//! d1 = dec(m4, m3), d2 = dec(d1, m2), d3 = dec(d2, m1)
//! MSFF(d1, d2, d3) -> 1x1 conv -> sigmoid
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{Builder, Conv2d, ConvBnRelu, DecoderBlock, Mkdc, MkdcConfig, Msff, ResidualBlock};
use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::norm::Mode;
use crate::ops::tape::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_widths: [usize; 4],
    pub trunk_width: usize,
    pub use_mkdc: bool,
    pub use_msff: bool,
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_widths: [16, 32, 64, 128],
            trunk_width: 96,
            use_mkdc: true,
            use_msff: true,
            attention_reduction: 8,
            spatial_kernel: 7,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_trunk(mut self, trunk_width: usize) -> Self {
        self.trunk_width = trunk_width;
        self
    }

    pub fn with_ablation(mut self, use_mkdc: bool, use_msff: bool) -> Self {
        self.use_mkdc = use_mkdc;
        self.use_msff = use_msff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.contains(&0) || self.trunk_width == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.attention_reduction == 0 || self.trunk_width % self.attention_reduction != 0 {
            return Err(Error::Config(format!(
                "trunk_width {} must be divisible by attention_reduction {}",
                self.trunk_width, self.attention_reduction
            )));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "spatial_kernel {} must be odd",
                self.spatial_kernel
            )));
        }
        Ok(())
    }
}

/// Per-scale feature refinement: an MKDC block or, when ablated, one 3x3
/// conv-BN-ReLU of the same width.
#[derive(Debug, Clone)]
pub enum Refiner {
    Mkdc(Box<Mkdc>),
    Plain(ConvBnRelu),
}

impl Refiner {
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Refiner::Mkdc(m) => m.forward(g, x),
            Refiner::Plain(c) => c.forward(g, x),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Msff(Box<Msff>),
    /// Upsample the finest decoder output 2x, then a 3x3 conv-BN-ReLU.
    Upsample(ConvBnRelu),
}

#[derive(Debug, Clone)]
pub struct MkdcNet {
    pub config: ModelConfig,
    pub stem: ConvBnRelu,
    pub stages: [ResidualBlock; 3],
    pub laterals: [ConvBnRelu; 4],
    pub refiners: [Refiner; 4],
    pub decoders: [DecoderBlock; 3],
    pub fusion: Fusion,
    pub head: Conv2d,
}

pub const INPUT_MULTIPLE: usize = 16;

impl MkdcNet {
    /// Builds the network and a freshly initialized parameter store.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore<f32>)> {
        let mut store = ParamStore::new();
        let net = Self::build(config, &mut store)?;
        Ok((net, store))
    }

    /// Builds the network description only. Parameter names are registered
    /// in a scratch store, so this is cheap enough to call before loading a
    /// checkpoint.
    pub fn build(config: ModelConfig, store: &mut ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let w = config.encoder_widths;
        let t = config.trunk_width;
        let mut b = Builder::new(store, config.seed);
        let stem = ConvBnRelu::new(&mut b, "enc.stem", 3, w[0], 3, 2)?;
        let stages = [
            ResidualBlock::new(&mut b, "enc.stage2", w[0], w[1], 2)?,
            ResidualBlock::new(&mut b, "enc.stage3", w[1], w[2], 2)?,
            ResidualBlock::new(&mut b, "enc.stage4", w[2], w[3], 2)?,
        ];
        let lateral = |b: &mut Builder<'_>, i: usize| ConvBnRelu::new(b, &format!("lat{}", i + 1), w[i], t, 3, 1);
        let laterals = [lateral(&mut b, 0)?, lateral(&mut b, 1)?, lateral(&mut b, 2)?, lateral(&mut b, 3)?];
        let mkdc_cfg = MkdcConfig {
            attention_reduction: config.attention_reduction,
            spatial_kernel: config.spatial_kernel,
            ..MkdcConfig::new(t, t)
        };
        let refiner = |b: &mut Builder<'_>, i: usize| -> Result<Refiner> {
            let name = format!("mkdc{}", i + 1);
            Ok(if config.use_mkdc {
                Refiner::Mkdc(Box::new(Mkdc::new(b, &name, &mkdc_cfg)?))
            } else {
                Refiner::Plain(ConvBnRelu::new(b, &name, t, t, 3, 1)?)
            })
        };
        let refiners = [refiner(&mut b, 0)?, refiner(&mut b, 1)?, refiner(&mut b, 2)?, refiner(&mut b, 3)?];
        let decoders = [
            DecoderBlock::new(&mut b, "dec1", t, t, t)?,
            DecoderBlock::new(&mut b, "dec2", t, t, t)?,
            DecoderBlock::new(&mut b, "dec3", t, t, t)?,
        ];
        let fusion = if config.use_msff {
            Fusion::Msff(Box::new(Msff::new(
                &mut b,
                "msff",
                [t, t, t],
                t,
                config.attention_reduction,
                config.spatial_kernel,
            )?))
        } else {
            Fusion::Upsample(ConvBnRelu::new(&mut b, "tail", t, t, 3, 1)?)
        };
        let head = b.conv("head", t, 1, 1, ConvGeom::new(1, 0, 1), true)?;
        Ok(Self {
            config,
            stem,
            stages,
            laterals,
            refiners,
            decoders,
            fusion,
            head,
        })
    }

    pub fn check_input(&self, shape: crate::tensor::Shape4) -> Result<()> {
        if shape.c != 3 {
            return Err(Error::ChannelMismatch {
                op: "mkdcnet_input",
                expected: 3,
                got: shape.c,
            });
        }
        if shape.h == 0 || shape.w == 0 || shape.h % INPUT_MULTIPLE != 0 || shape.w % INPUT_MULTIPLE != 0 {
            return Err(Error::InvalidShape {
                op: "mkdcnet_input",
                shape,
                reason: format!("height and width must be positive multiples of {INPUT_MULTIPLE}"),
            });
        }
        Ok(())
    }

    /// Four encoder features at strides 2, 4, 8 and 16.
    pub fn encoder_forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<[Var; 4]> {
        self.check_input(g.value(x).shape())?;
        let f1 = self.stem.forward(g, x)?;
        let f2 = self.stages[0].forward(g, f1)?;
        let f3 = self.stages[1].forward(g, f2)?;
        let f4 = self.stages[2].forward(g, f3)?;
        Ok([f1, f2, f3, f4])
    }

    /// Per-pixel foreground probabilities, shape `(N, 1, H, W)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let feats = self.encoder_forward(g, x)?;
        let mut m = [x; 4];
        for i in 0..4 {
            let y = self.laterals[i].forward(g, feats[i])?;
            m[i] = self.refiners[i].forward(g, y)?;
        }
        let d1 = self.decoders[0].forward(g, m[3], m[2])?;
        let d2 = self.decoders[1].forward(g, d1, m[1])?;
        let d3 = self.decoders[2].forward(g, d2, m[0])?;
        let fused = match &self.fusion {
            Fusion::Msff(msff) => msff.forward(g, d1, d2, d3)?,
            Fusion::Upsample(tail) => {
                let up = g.upsample2x(d3)?;
                tail.forward(g, up)?
            }
        };
        let logits = self.head.forward(g, fused)?;
        Ok(g.sigmoid(logits))
    }

    /// Eval-mode forward pass without gradient bookkeeping beyond the tape.
    pub fn predict(&self, store: &ParamStore<f32>, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new(store, Mode::Eval);
        let xv = g.input(x);
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

const CKPT_MAGIC: &[u8; 4] = b"MKDC";
const CKPT_VERSION: u32 = 1;

/// Named tensors plus a JSON metadata block.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    /// Parameters and buffers of `store`; `meta` gets a `model` field.
    pub fn from_store(store: &ParamStore<f32>, config: &ModelConfig) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, t) in store.params().chain(store.buffers()) {
            tensors.insert(name.to_string(), t.clone());
        }
        let meta = serde_json::json!({ "model": config, "optimizer_state": false });
        Ok(Self { tensors, meta })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let v = self
            .meta
            .get("model")
            .ok_or_else(|| Error::Config("checkpoint has no model config".into()))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    /// Rebuilds the network and restores every parameter and buffer.
    pub fn restore(&self) -> Result<(MkdcNet, ParamStore<f32>)> {
        let (net, mut store) = MkdcNet::new(self.model_config()?)?;
        self.load_into(&mut store)?;
        Ok((net, store))
    }

    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let param_names: Vec<String> = store.params().map(|(n, _)| n.to_string()).collect();
        let buffer_names: Vec<String> = store.buffers().map(|(n, _)| n.to_string()).collect();
        for (name, is_param) in param_names
            .iter()
            .map(|n| (n, true))
            .chain(buffer_names.iter().map(|n| (n, false)))
        {
            let src = self
                .tensors
                .get(name.as_str())
                .ok_or_else(|| Error::UnknownParam(format!("{name} missing from checkpoint")))?;
            let dst = if is_param { store.param_mut(name)? } else { store.buffer_mut(name)? };
            if dst.shape() != src.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint_load",
                    left: dst.shape(),
                    right: src.shape(),
                });
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CKPT_MAGIC)?;
        out.write_all(&CKPT_VERSION.to_le_bytes())?;
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::InvalidArgument("too many checkpoint entries".into()))?;
        out.write_all(&count.to_le_bytes())?;
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("entry name too long: {name}")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            t.write_dump(out)?;
        }
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_all(&meta)?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = std::io::Cursor::new(&bytes[..]);
        let mut head = [0u8; 12];
        cur.read_exact(&mut head).map_err(|_| Error::Parse {
            offset: 0,
            reason: "truncated checkpoint header".into(),
        })?;
        if &head[0..4] != CKPT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: "bad checkpoint magic".into(),
            });
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(Error::Parse {
                offset: 4,
                reason: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let offset = cur.position() as usize;
            let mut len = [0u8; 2];
            cur.read_exact(&mut len).map_err(|_| Error::Parse {
                offset,
                reason: "truncated entry name length".into(),
            })?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            cur.read_exact(&mut name).map_err(|_| Error::Parse {
                offset: offset + 2,
                reason: "truncated entry name".into(),
            })?;
            let name = String::from_utf8(name).map_err(|_| Error::Parse {
                offset: offset + 2,
                reason: "entry name is not UTF-8".into(),
            })?;
            let at = cur.position() as usize;
            let t = Tensor::read_dump(&mut cur).map_err(|e| match e {
                Error::Parse { offset, reason } => Error::Parse {
                    offset: at + offset,
                    reason,
                },
                other => other,
            })?;
            tensors.insert(name, t);
        }
        let rest = &bytes[cur.position() as usize..];
        let meta = serde_json::from_slice(rest).map_err(|e| Error::Parse {
            offset: cur.position() as usize,
            reason: format!("config block: {e}"),
        })?;
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
