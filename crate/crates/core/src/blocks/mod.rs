//! Composite network blocks. Each block only holds parameter names; values
//! live in a [`ParamStore`](crate::params::ParamStore), so one block
//! definition runs in `f32` for training and `f64` for gradient checks.

pub mod attention;
pub mod decoder;
pub mod layers;
pub mod mkdc;
pub mod msff;

pub use attention::{AttentionConfig, ChannelAttention, SpatialAttention};
pub use decoder::DecoderBlock;
pub use layers::{BatchNorm2d, Builder, Conv2d, ConvBnRelu, ResidualBlock};
pub use mkdc::{Mkdc, MkdcConfig};
pub use msff::Msff;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::norm::Mode;
    use crate::ops::tape::Graph;
    use crate::params::ParamStore;
    use crate::tensor::{Shape4, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: impl Into<Shape4>, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.into(), |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn zero_params(store: &mut ParamStore<f32>, prefix: &str) {
        let names: Vec<String> = store
            .params()
            .filter(|(n, _)| n.starts_with(prefix) && (n.ends_with(".weight") || n.ends_with(".bias")))
            .map(|(n, _)| n.to_string())
            .collect();
        for n in names {
            store.param_mut(&n).unwrap().data_mut().fill(0.0);
        }
    }

    #[test]
    fn conv_bn_relu_shape_and_range() {
        let mut store = ParamStore::new();
        let block = ConvBnRelu::new(&mut Builder::new(&mut store, 1), "cbr", 64, 96, 3, 1).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(random((1, 64, 32, 32), 2));
        let y = block.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), Shape4::new(1, 96, 32, 32));
        assert!(g.value(y).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn residual_with_zero_branch_is_relu_of_input() {
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut Builder::new(&mut store, 1), "res", 8, 8, 1).unwrap();
        assert!(block.shortcut.is_none());
        zero_params(&mut store, "res.conv");
        let x = random((2, 8, 6, 6), 4);
        let mut g = Graph::new(&store, Mode::Train);
        let xv = g.input(x.clone());
        let y = block.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x.relu());

        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut Builder::new(&mut store, 1), "res", 32, 64, 1).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let xv = g.input(random((1, 32, 16, 16), 5));
        let y = block.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y).shape(), Shape4::new(1, 64, 16, 16));
    }

    #[test]
    fn zero_weight_attention_halves_input() {
        let mut store = ParamStore::new();
        let cfg = AttentionConfig::new(64, 8);
        let mut b = Builder::new(&mut store, 3);
        let ca = ChannelAttention::new(&mut b, "ca", &cfg).unwrap();
        let sa = SpatialAttention::new(&mut b, "sa", &cfg).unwrap();
        zero_params(&mut store, "");
        let x = random((1, 64, 8, 8), 6);
        let mut g = Graph::new(&store, Mode::Train);
        let xv = g.input(x.clone());
        let c = ca.forward(&mut g, xv).unwrap();
        let s = sa.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(c), &x.scale(0.5));
        assert_eq!(g.value(s), &x.scale(0.5));
    }

    #[test]
    fn attention_rejects_indivisible_reduction() {
        let mut store = ParamStore::new();
        let err = ChannelAttention::new(&mut Builder::new(&mut store, 0), "ca", &AttentionConfig::new(12, 8));
        assert!(err.is_err());
    }

    #[test]
    fn mkdc_shape_contract() {
        let mut store = ParamStore::new();
        let block = Mkdc::new(&mut Builder::new(&mut store, 1), "mkdc", &MkdcConfig::new(64, 96)).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let x = g.input(random((1, 64, 32, 32), 1));
        let y = block.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), Shape4::new(1, 96, 32, 32));
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn mkdc_with_only_projection_is_attention_of_projection() {
        let mut store = ParamStore::new();
        let cfg = MkdcConfig::new(4, 4).with_reduction(2);
        let block = Mkdc::new(&mut Builder::new(&mut store, 1), "m", &cfg).unwrap();
        zero_params(&mut store, "m.");
        let w = store.param_mut("m.proj.weight").unwrap();
        *w = Tensor::from_fn((4, 4, 1, 1), |o, c, _, _| if o == c { 1.0 } else { 0.0 });
        let x = random((1, 4, 8, 8), 9);
        let mut g = Graph::new(&store, Mode::Train);
        let xv = g.input(x.clone());
        let y = block.forward(&mut g, xv).unwrap();
        // Zero attention weights give two 0.5 gates around the identity projection.
        let out = g.value(y);
        assert!(out.is_finite());
        assert!(out.max_abs_diff(&x.scale(0.25)).unwrap() < 1e-7);
    }

    #[test]
    fn decoder_shapes() {
        let mut store = ParamStore::new();
        let block = DecoderBlock::new(&mut Builder::new(&mut store, 1), "dec", 128, 96, 96).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let d = g.input(random((1, 128, 8, 8), 1));
        let skip = g.input(random((1, 96, 16, 16), 2));
        let y = block.forward(&mut g, d, skip).unwrap();
        assert_eq!(g.value(y).shape(), Shape4::new(1, 96, 16, 16));
        let bad = g.input(random((1, 96, 15, 15), 3));
        assert!(block.forward(&mut g, d, bad).is_err());
    }

    #[test]
    fn msff_restores_full_resolution() {
        let mut store = ParamStore::new();
        let block = Msff::new(&mut Builder::new(&mut store, 1), "msff", [8, 8, 8], 8, 4, 7).unwrap();
        let mut g = Graph::new(&store, Mode::Train);
        let d1 = g.input(random((1, 8, 8, 8), 1));
        let d2 = g.input(random((1, 8, 16, 16), 2));
        let d3 = g.input(random((1, 8, 32, 32), 3));
        let y = block.forward(&mut g, d1, d2, d3).unwrap();
        assert_eq!(g.value(y).shape(), Shape4::new(1, 8, 64, 64));
        let wrong = g.input(random((1, 8, 30, 30), 4));
        assert!(block.forward(&mut g, d1, d2, wrong).is_err());
    }

    #[test]
    fn msff_constant_inputs_give_constant_channels_before_attention() {
        let mut store = ParamStore::new();
        let block = Msff::new(&mut Builder::new(&mut store, 1), "msff", [4, 4, 4], 4, 2, 7).unwrap();
        // Without padding effects a constant field stays constant; check the
        // upsample -> concat chain on 1x1 kernels by evaluating in eval mode
        // with a 1x1-sized problem where padding does not apply.
        let mut g = Graph::new(&store, Mode::Eval);
        let d1 = g.input(Tensor::full((1, 4, 1, 1), 0.7));
        let d2 = g.input(Tensor::full((1, 4, 2, 2), -0.2));
        let d3 = g.input(Tensor::full((1, 4, 4, 4), 1.1));
        let y = block.forward(&mut g, d1, d2, d3).unwrap();
        assert!(g.value(y).is_finite());
        assert_eq!(g.value(y).shape(), Shape4::new(1, 4, 8, 8));
    }
}
