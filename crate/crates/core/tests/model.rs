use mkdcnet::blocks::Builder;
use mkdcnet::data::synth_dataset;
use mkdcnet::model::Checkpoint;
use mkdcnet::ops::conv::ConvGeom;
use mkdcnet::ops::norm::Mode;
use mkdcnet::ops::tape::Graph;
use mkdcnet::tensor::stack_batch;
use mkdcnet::train::{train_step, Adam};
use mkdcnet::config::OptimizerConfig;
use mkdcnet::data::{batches, epoch_order};
use mkdcnet::loss::LossConfig;
use mkdcnet::{Error, MkdcNet, ModelConfig, ParamStore, Shape4, Tensor};

fn image(n: usize, size: usize, seed: u32) -> Tensor<f32> {
    Tensor::from_fn((n, 3, size, size), |b, c, h, w| {
        let v = (b as u32 * 7919 + c as u32 * 104729 + h as u32 * 31 + w as u32 * 17 + seed) % 997;
        v as f32 / 997.0
    })
}

fn small() -> ModelConfig {
    ModelConfig::default().with_trunk(16)
}

#[test]
fn encoder_stride_contract() {
    let (net, store) = MkdcNet::new(ModelConfig::default()).unwrap();
    let mut g = Graph::new(&store, Mode::Eval);
    let x = g.input(image(1, 256, 0));
    let f = net.encoder_forward(&mut g, x).unwrap();
    let shapes: Vec<[usize; 4]> = f.iter().map(|&v| g.value(v).shape().dims()).collect();
    assert_eq!(
        shapes,
        [[1, 16, 128, 128], [1, 32, 64, 64], [1, 64, 32, 32], [1, 128, 16, 16]]
    );
    let x = g.input(image(1, 64, 0));
    let f = net.encoder_forward(&mut g, x).unwrap();
    assert_eq!(g.value(f[3]).shape(), Shape4::new(1, 128, 4, 4));
    let x = g.input(image(1, 250, 0));
    assert!(matches!(net.encoder_forward(&mut g, x), Err(Error::InvalidShape { .. })));
}

#[test]
fn forward_shape_range_and_purity() {
    let (net, store) = MkdcNet::new(ModelConfig::default()).unwrap();
    let x = image(2, 64, 1);
    let a = net.predict(&store, x.clone()).unwrap();
    assert_eq!(a.shape(), Shape4::new(2, 1, 64, 64));
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let b = net.predict(&store, x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn construction_is_reproducible() {
    let (_, a) = MkdcNet::new(small()).unwrap();
    let (_, b) = MkdcNet::new(small()).unwrap();
    assert_eq!(a.count_params(), b.count_params());
    for ((na, ta), (nb, tb)) in a.params().zip(b.params()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
    let (_, c) = MkdcNet::new(ModelConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(
        a.param("head.weight").unwrap().data(),
        c.param("head.weight").unwrap().data()
    );
}

#[test]
fn parameter_counts() {
    let mut store = ParamStore::new();
    Builder::new(&mut store, 0)
        .conv("c", 3, 1, 1, ConvGeom::new(1, 0, 1), true)
        .unwrap();
    assert_eq!(store.count_params(), 4);

    let count = |cfg: ModelConfig| MkdcNet::new(cfg).unwrap().1.count_params();
    let full = count(ModelConfig::default());
    assert!(count(ModelConfig::default().with_ablation(false, true)) < full);
    assert!(count(ModelConfig::default().with_ablation(true, false)) < full);
    assert!(count(ModelConfig::default().with_trunk(192)) > full);
}

#[test]
fn config_validation() {
    assert!(MkdcNet::new(ModelConfig::default().with_trunk(12)).is_err());
    assert!(MkdcNet::new(ModelConfig {
        spatial_kernel: 4,
        ..ModelConfig::default()
    })
    .is_err());
}

#[test]
fn output_matches_input_resolution() {
    let (net, store) = MkdcNet::new(ModelConfig::default().with_trunk(8)).unwrap();
    for size in [16, 32, 48, 96] {
        let y = net.predict(&store, image(1, size, 2)).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, size, size));
    }
}

#[test]
fn all_ablations_train_one_step() {
    let samples = synth_dataset(4, 32, 3).unwrap();
    let order = epoch_order(4, 0, 0);
    let batch = &batches(&samples, &order, 4).unwrap()[0];
    for (mkdc, msff) in [(true, true), (false, true), (true, false), (false, false)] {
        let (net, mut store) = MkdcNet::new(small().with_ablation(mkdc, msff)).unwrap();
        let before = store.param("head.weight").unwrap().clone();
        let mut adam = Adam::new(OptimizerConfig::default());
        let loss = train_step(&net, &mut store, &mut adam, batch, LossConfig::default()).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_ne!(store.param("head.weight").unwrap(), &before);
        let y = net.predict(&store, batch.images.clone()).unwrap();
        assert_eq!(y.shape(), Shape4::new(4, 1, 32, 32));
    }
}

#[test]
fn eval_mode_is_batch_independent() {
    let (net, store) = MkdcNet::new(small()).unwrap();
    let imgs: Vec<Tensor<f32>> = (0..3).map(|i| image(1, 32, 10 + i)).collect();
    let batched = net.predict(&store, stack_batch(&imgs.iter().collect::<Vec<_>>()).unwrap()).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        let single = net.predict(&store, img.clone()).unwrap();
        assert_eq!(single.data(), batched.batch_item(i).data());
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small().with_ablation(true, false);
    let (net, mut store) = MkdcNet::new(cfg.clone()).unwrap();
    store.buffer_mut("lat1.bn.running_mean").unwrap().data_mut()[0] = 0.25;
    let ck = Checkpoint::from_store(&store, &cfg).unwrap();
    let mut bytes = Vec::new();
    ck.write(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"MKDC");
    let back = Checkpoint::read(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, ck);
    let (net2, store2) = back.restore().unwrap();
    assert_eq!(net2.config, cfg);
    let x = image(1, 32, 4);
    assert_eq!(net.predict(&store, x.clone()).unwrap(), net2.predict(&store2, x).unwrap());

    let cut = &bytes[..bytes.len() / 2];
    assert!(matches!(Checkpoint::read(&mut &cut[..]), Err(Error::Parse { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read(&mut bad.as_slice()), Err(Error::Parse { offset: 0, .. })));
}
