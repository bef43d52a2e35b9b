//! Finite-difference gradient checks for every differentiable operator,
//! every block and a narrow full model, run in `f64`.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::blocks::{
    AttentionConfig, Builder, ChannelAttention, ConvBnRelu, DecoderBlock, Mkdc, MkdcConfig, Msff, ResidualBlock,
    SpatialAttention,
};
use crate::error::Result;
use crate::loss::LossConfig;
use crate::model::{MkdcNet, ModelConfig};
use crate::ops::conv::ConvGeom;
use crate::ops::gradcheck::{check_graph, GradCheckConfig, GradCheckReport, Reduction};
use crate::ops::norm::Mode;
use crate::ops::pool::PoolKind;
use crate::ops::tape::{Graph, Var};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Shape4, Tensor};

pub const TOLERANCE: f64 = 1e-4;

type CaseFn = fn(&GradCheckConfig) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct Case {
    pub name: &'static str,
    /// `ops`, `blocks` or `model`.
    pub group: &'static str,
    run: CaseFn,
}

#[derive(Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub group: &'static str,
    pub result: Result<GradCheckReport>,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        matches!(&self.result, Ok(r) if r.max_rel_error < TOLERANCE)
    }
}

fn uniform(shape: impl Into<Shape4>, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[b"gradsuite"]);
    Tensor::from_fn(shape.into(), |_, _, _, _| r.random_range(lo..hi))
}

fn rand(shape: impl Into<Shape4>, seed: u64) -> Tensor<f64> {
    uniform(shape, seed, -1.0, 1.0)
}

/// Values in `[-1, -0.05] U [0.05, 1]`, away from the ReLU kink.
fn off_zero(shape: impl Into<Shape4>, seed: u64) -> Tensor<f64> {
    rand(shape, seed).map(|v| v.signum() * (0.05 + 0.95 * v.abs()))
}

fn inputs_check(
    inputs: Vec<Tensor<f64>>,
    reduction: Reduction,
    cfg: &GradCheckConfig,
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    check_graph(&ParamStore::new(), &inputs, Mode::Train, reduction, build, cfg)
}

fn conv_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    // (kernel, stride, padding, dilation, input size)
    let geoms = [
        (1, 1, 0, 1, 6),
        (3, 1, 1, 1, 6),
        (3, 2, 1, 1, 7),
        (3, 1, 3, 3, 8),
        (7, 1, 3, 1, 8),
        (3, 2, 2, 2, 9),
        (11, 1, 5, 1, 12),
        (3, 1, 11, 11, 6),
    ];
    let mut worst: Option<GradCheckReport> = None;
    for (i, &(k, s, p, d, n)) in geoms.iter().enumerate() {
        let seed = 100 + 3 * i as u64;
        let inputs = vec![rand((2, 3, n, n), seed), rand((4, 3, k, k), seed + 1), rand((1, 4, 1, 1), seed + 2)];
        let geom = ConvGeom::new(s, p, d);
        let r = inputs_check(inputs, Reduction::Projection(seed), cfg, |g, v| g.conv2d(v[0], v[1], Some(v[2]), geom))?;
        worst = Some(match worst {
            Some(w) if w.max_rel_error >= r.max_rel_error => w,
            _ => r,
        });
    }
    Ok(worst.expect("at least one geometry"))
}

fn conv_bn_relu_sum_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![
        rand((2, 3, 8, 8), 1),
        rand((4, 3, 3, 3), 2),
        uniform((1, 4, 1, 1), 3, 0.5, 1.5),
        rand((1, 4, 1, 1), 4),
    ];
    inputs_check(inputs, Reduction::Sum, cfg, |g, v| {
        let y = g.conv2d(v[0], v[1], None, ConvGeom::same(3, 1))?;
        let (y, _, _) = g.batch_norm_train(y, v[2], v[3], 1e-5)?;
        Ok(g.relu(y))
    })
}

fn bn_train_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![rand((2, 3, 4, 4), 5), uniform((1, 3, 1, 1), 6, 0.5, 1.5), rand((1, 3, 1, 1), 7)];
    inputs_check(inputs, Reduction::Projection(8), cfg, |g, v| {
        Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
    })
}

fn bn_eval_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![rand((2, 3, 4, 4), 9), uniform((1, 3, 1, 1), 10, 0.5, 1.5), rand((1, 3, 1, 1), 11)];
    inputs_check(inputs, Reduction::Projection(12), cfg, |g, v| {
        g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5)
    })
}

fn elementwise_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![off_zero((2, 3, 4, 4), 13), rand((2, 3, 4, 4), 14)];
    inputs_check(inputs, Reduction::Projection(15), cfg, |g, v| {
        let a = g.relu(v[0]);
        let b = g.sigmoid(v[1]);
        let c = g.mul(a, b)?;
        let d = g.add(c, v[1])?;
        let e = g.sub(d, v[0])?;
        Ok(g.scale(e, 1.5))
    })
}

fn gates_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![rand((2, 3, 4, 4), 16), rand((2, 3, 1, 1), 17), rand((2, 1, 4, 4), 18)];
    inputs_check(inputs, Reduction::Projection(19), cfg, |g, v| {
        let y = g.channel_gate(v[0], v[1])?;
        g.spatial_gate(y, v[2])
    })
}

fn concat_upsample_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let inputs = vec![rand((2, 2, 3, 5), 20), rand((2, 3, 3, 5), 21)];
    inputs_check(inputs, Reduction::Projection(22), cfg, |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        g.upsample2x(c)
    })
}

fn pool_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let kinds = [
        PoolKind::GlobalAvg,
        PoolKind::GlobalMax,
        PoolKind::ChannelAvg,
        PoolKind::ChannelMax,
        PoolKind::MaxPool2x,
    ];
    let mut worst: Option<GradCheckReport> = None;
    for (i, kind) in kinds.into_iter().enumerate() {
        let r = inputs_check(vec![rand((2, 3, 4, 6), 30 + i as u64)], Reduction::Projection(40 + i as u64), cfg, |g, v| {
            g.pool(v[0], kind)
        })?;
        worst = Some(match worst {
            Some(w) if w.max_rel_error >= r.max_rel_error => w,
            _ => r,
        });
    }
    Ok(worst.expect("at least one pool kind"))
}

fn loss_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let pred = uniform((1, 1, 4, 4), 50, 0.05, 0.95);
    let target = uniform((1, 1, 4, 4), 51, 0.0, 1.0).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    inputs_check(vec![pred], Reduction::Sum, cfg, move |g, v| {
        g.bce_dice(v[0], &target, LossConfig::default())
    })
}

/// Builds a block into a fresh store and checks it in training mode.
fn block_check<B>(
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    cfg: &GradCheckConfig,
    make: impl FnOnce(&mut Builder<'_>) -> Result<B>,
    forward: impl Fn(&B, &mut Graph<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut store = ParamStore::<f32>::new();
    let block = make(&mut Builder::new(&mut store, seed))?;
    check_graph(
        &store.cast(),
        &inputs,
        Mode::Train,
        Reduction::Projection(seed),
        |g, v| forward(&block, g, v),
        cfg,
    )
}

fn conv_bn_relu_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        60,
        vec![rand((2, 3, 8, 8), 60)],
        cfg,
        |b| ConvBnRelu::new(b, "cbr", 3, 4, 3, 1),
        |blk, g, v| blk.forward(g, v[0]),
    )
}

fn residual_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let same = block_check(
        61,
        vec![rand((2, 4, 6, 6), 61)],
        cfg,
        |b| ResidualBlock::new(b, "res", 4, 4, 1),
        |blk, g, v| blk.forward(g, v[0]),
    )?;
    let projected = block_check(
        62,
        vec![rand((2, 3, 8, 8), 62)],
        cfg,
        |b| ResidualBlock::new(b, "res", 3, 5, 2),
        |blk, g, v| blk.forward(g, v[0]),
    )?;
    Ok(if same.max_rel_error >= projected.max_rel_error { same } else { projected })
}

fn channel_attention_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        63,
        vec![rand((2, 8, 4, 4), 63)],
        cfg,
        |b| ChannelAttention::new(b, "ca", &AttentionConfig::new(8, 4)),
        |blk, g, v| blk.forward(g, v[0]),
    )
}

fn spatial_attention_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        64,
        vec![rand((2, 4, 8, 8), 64)],
        cfg,
        |b| SpatialAttention::new(b, "sa", &AttentionConfig::new(4, 1)),
        |blk, g, v| blk.forward(g, v[0]),
    )
}

fn mkdc_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        65,
        vec![rand((1, 4, 8, 8), 65)],
        cfg,
        |b| Mkdc::new(b, "mkdc", &MkdcConfig::new(4, 4).with_reduction(2)),
        |blk, g, v| blk.forward(g, v[0]),
    )
}

fn decoder_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        66,
        vec![rand((1, 4, 4, 4), 66), rand((1, 3, 8, 8), 67)],
        cfg,
        |b| DecoderBlock::new(b, "dec", 4, 3, 4),
        |blk, g, v| blk.forward(g, v[0], v[1]),
    )
}

fn msff_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    block_check(
        68,
        vec![rand((1, 4, 8, 8), 68), rand((1, 4, 16, 16), 69), rand((1, 4, 32, 32), 70)],
        cfg,
        |b| Msff::new(b, "msff", [4, 4, 4], 4, 2, 7),
        |blk, g, v| blk.forward(g, v[0], v[1], v[2]),
    )
}

fn model_case(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let config = ModelConfig::default().with_trunk(8);
    let (net, store) = MkdcNet::new(config)?;
    let x = uniform((2, 3, 32, 32), 71, 0.0, 1.0);
    check_graph(
        &store.cast(),
        &[x],
        Mode::Train,
        Reduction::Projection(72),
        |g, v| net.forward(g, v[0]),
        cfg,
    )
}

pub fn cases() -> Vec<Case> {
    let c = |name, group, run| Case { name, group, run };
    vec![
        c("conv2d", "ops", conv_case as CaseFn),
        c("conv2d_bn_relu_sum", "ops", conv_bn_relu_sum_case),
        c("batchnorm_train", "ops", bn_train_case),
        c("batchnorm_eval", "ops", bn_eval_case),
        c("elementwise", "ops", elementwise_case),
        c("gates", "ops", gates_case),
        c("concat_upsample", "ops", concat_upsample_case),
        c("pool", "ops", pool_case),
        c("bce_dice", "ops", loss_case),
        c("conv_bn_relu", "blocks", conv_bn_relu_case),
        c("residual", "blocks", residual_case),
        c("channel_attention", "blocks", channel_attention_case),
        c("spatial_attention", "blocks", spatial_attention_case),
        c("mkdc", "blocks", mkdc_case),
        c("decoder", "blocks", decoder_case),
        c("msff", "blocks", msff_case),
        c("model", "model", model_case),
    ]
}

/// Runs the cases whose name or group equals `filter` (all when `None`).
pub fn run(filter: Option<&str>, cfg: &GradCheckConfig) -> Vec<Outcome> {
    cases()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| f == c.name || f == c.group))
        .map(|c| {
            let t0 = Instant::now();
            let result = (c.run)(cfg);
            Outcome {
                name: c.name,
                group: c.group,
                result,
                elapsed: t0.elapsed(),
            }
        })
        .collect()
}
