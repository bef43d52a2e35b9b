use mkdcnet::data::augment::{augment, rotate, AugmentConfig};
use mkdcnet::data::netpbm;
use mkdcnet::data::synth::{synth_dataset, MAX_FRACTION, MIN_FRACTION};
use mkdcnet::data::{resize_image, resize_mask, split, Corpus, SplitRatios};
use mkdcnet::ops::resample::bilinear_upsample2x;
use mkdcnet::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn netpbm_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = Tensor::from_fn((1, 3, 7, 5), |_, _, _, _| rng.random_range(0.0..1.0));
    let path = dir.path().join("a.ppm");
    netpbm::save_image(&img, &path).unwrap();
    let back = netpbm::load_image(&path).unwrap();
    assert!(back.max_abs_diff(&img).unwrap() <= 1.0 / 255.0);
}

#[test]
fn mask_loads_as_binary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let mut bytes = b"P5\n3 1\n255\n".to_vec();
    bytes.extend([0u8, 255, 255]);
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(netpbm::load_mask(&path).unwrap().data(), &[0.0, 1.0, 1.0]);

    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    match netpbm::load_mask(&path) {
        Err(Error::Parse { offset, reason }) => {
            assert_eq!(offset, bytes.len() - 1);
            assert!(reason.contains("truncated"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn corpus_layout_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(dir.path());
    let samples = synth_dataset(3, 32, 1).unwrap();
    for s in &samples {
        corpus.save(s).unwrap();
    }
    assert!(corpus.image_path("synth_00000").exists());
    assert!(corpus.mask_path("synth_00000").exists());
    let ids = corpus.ids().unwrap();
    assert_eq!(ids, ["synth_00000", "synth_00001", "synth_00002"]);
    let loaded = corpus.load_all(&ids, Some(64)).unwrap();
    for (l, s) in loaded.iter().zip(&samples) {
        l.validate().unwrap();
        assert_eq!(l.image.shape().dims(), [1, 3, 64, 64]);
        assert_eq!(resize_mask(&s.mask, 64, 64).unwrap(), l.mask);
    }
}

#[test]
fn resizing_contracts() {
    let c = Tensor::full((1, 3, 37, 53), 0.3f32);
    let r = resize_image(&c, 256, 256).unwrap();
    assert!(r.data().iter().all(|&v| v == 0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Tensor::from_fn((1, 1, 50, 70), |_, _, _, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let r = resize_mask(&m, 256, 256).unwrap();
    assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let img = Tensor::from_fn((1, 3, 128, 128), |_, _, _, _| rng.random_range(0.0..1.0f32));
    assert_eq!(resize_image(&img, 256, 256).unwrap(), bilinear_upsample2x(&img).unwrap());
    assert!(resize_image(&img, 0, 256).is_err());
}

#[test]
fn split_sizes_and_determinism() {
    let ids: Vec<String> = (0..1000).map(|i| format!("{i}")).collect();
    let a = split(&ids, SplitRatios::default(), 42).unwrap();
    assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (800, 100, 100));
    assert_eq!(a, split(&ids, SplitRatios::default(), 42).unwrap());
    assert_ne!(a.train, split(&ids, SplitRatios::default(), 43).unwrap().train);
    let b = split(&ids, SplitRatios::two_way(880, 120), 42).unwrap();
    assert_eq!((b.train.len(), b.valid.len(), b.test.len()), (880, 0, 120));
}

proptest! {
    #[test]
    fn split_partitions_exactly(n in 1usize..10_000, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        let ratios = SplitRatios { train: a, valid: b, test: 1.0 - a - b };
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let m = split(&ids, ratios, seed).unwrap();
        let mut all: Vec<String> = m.train.iter().chain(&m.valid).chain(&m.test).cloned().collect();
        all.sort();
        let mut want = ids.clone();
        want.sort();
        prop_assert_eq!(all, want);
        for (len, r) in [(m.train.len(), a), (m.valid.len(), b), (m.test.len(), 1.0 - a - b)] {
            prop_assert!((len as f64 - r * n as f64).abs() <= 1.0);
        }
    }
}

#[test]
fn augmentation_contracts() {
    let samples = synth_dataset(6, 32, 5).unwrap();
    let id = AugmentConfig::identity();
    for s in &samples {
        assert_eq!(&augment(s, &id, 3), s);
    }
    let flip = AugmentConfig {
        p_hflip: 1.0,
        ..AugmentConfig::identity()
    };
    for s in &samples {
        assert_eq!(&augment(&augment(s, &flip, 0), &flip, 1), s);
    }
    assert_eq!(rotate(&samples[0].mask, 0.0, false), samples[0].mask);
    assert!(rotate(&samples[0].image, 0.0, true).max_abs_diff(&samples[0].image).unwrap() <= 1e-6);

    let full = AugmentConfig {
        p_rotate: 1.0,
        coarse_dropout: mkdcnet::data::CoarseDropout {
            p: 1.0,
            ..Default::default()
        },
        ..AugmentConfig::default()
    };
    for epoch in 0..5 {
        for s in &samples {
            let a = augment(s, &full, epoch);
            a.validate().unwrap();
            assert_eq!(a, augment(s, &full, epoch));
        }
    }
    assert_ne!(augment(&samples[0], &full, 0), augment(&samples[0], &full, 1));
}

#[test]
fn dropout_leaves_mask_unless_asked() {
    let s = &synth_dataset(1, 32, 9).unwrap()[0];
    let mut cfg = AugmentConfig::identity();
    cfg.coarse_dropout.p = 1.0;
    let a = augment(s, &cfg, 0);
    assert_eq!(a.mask, s.mask);
    assert_ne!(a.image, s.image);
    cfg.coarse_dropout.apply_to_mask = true;
    cfg.coarse_dropout.max_holes = 8;
    let b = augment(s, &cfg, 0);
    assert!(b.mask.sum() <= s.mask.sum());
}

#[test]
fn synthetic_corpus_properties() {
    let a = synth_dataset(200, 64, 7).unwrap();
    assert_eq!(a.len(), 200);
    for s in &a {
        s.validate().unwrap();
        let frac = f64::from(s.mask.sum()) / 4096.0;
        assert!((MIN_FRACTION..=MAX_FRACTION).contains(&frac), "{}: {frac}", s.id);
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    let b = synth_dataset(200, 64, 7).unwrap();
    assert_eq!(a, b);
    assert!(synth_dataset(2, 50, 7).is_err());
}
