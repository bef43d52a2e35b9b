//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mkdcnet::blocks::{Builder, Mkdc, MkdcConfig};
use mkdcnet::data::SplitRatios;
use mkdcnet::metrics::{confusion, MetricReport};
use mkdcnet::ops::conv::{conv2d_forward, ConvGeom};
use mkdcnet::ops::norm::Mode;
use mkdcnet::ops::tape::Graph;
use mkdcnet::train::parse_history;
use mkdcnet::{MkdcNet, ModelConfig, ParamStore, Shape4, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mkdcnet")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .unwrap_or_else(|e| panic!("cannot start {}: {e}", bin()))
}

/// Runs the CLI and returns stdout, failing on a nonzero exit.
fn cli_ok(args: &[&str]) -> Result<String, String> {
    let out = run_cli(args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "mkdcnet {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(stdout)
}

/// `key=value` pairs of the last stdout line that contains `key`.
fn fields(stdout: &str, key: &str) -> Result<BTreeMap<String, String>, String> {
    let line = stdout
        .lines()
        .rev()
        .find(|l| l.split_whitespace().any(|t| t.starts_with(&format!("{key}="))))
        .ok_or_else(|| format!("no line with {key}= in output:\n{stdout}"))?;
    Ok(line
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn num(map: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    map.get(key)
        .ok_or_else(|| format!("missing {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// The single run directory under `out`.
fn only_run_dir(out: &Path) -> Result<PathBuf, String> {
    let dirs: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("history.csv").exists())
        .collect();
    match &dirs[..] {
        [d] => Ok(d.clone()),
        _ => Err(format!("expected one run directory in {}, found {dirs:?}", out.display())),
    }
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

// Criterion 1 -------------------------------------------------------------

/// Direct seven-deep loop with zero padding, accumulating bias first and then
/// input channel, kernel row, kernel column.
fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: Option<&[f32]>, stride: usize, pad: usize, dil: usize) -> Tensor<f32> {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * pad - dil * (ws.h - 1) - 1) / stride + 1;
    let ow = (xs.w + 2 * pad - dil * (ws.w - 1) - 1) / stride + 1;
    let mut out = vec![0.0f32; xs.n * ws.n * oh * ow];
    let xd = x.data();
    let wd = w.data();
    let mut idx = 0;
    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for c in 0..xs.c {
                        for u in 0..ws.h {
                            for v in 0..ws.w {
                                let r = (i * stride + u * dil) as isize - pad as isize;
                                let q = (j * stride + v * dil) as isize - pad as isize;
                                let xv = if r < 0 || q < 0 || r as usize >= xs.h || q as usize >= xs.w {
                                    0.0
                                } else {
                                    xd[((n * xs.c + c) * xs.h + r as usize) * xs.w + q as usize]
                                };
                                acc += wd[((o * ws.c + c) * ws.h + u) * ws.w + v] * xv;
                            }
                        }
                    }
                    out[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Tensor::from_values((xs.n, ws.n, oh, ow), out).unwrap()
}

fn criterion_conv_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sizes = [1usize, 3, 7, 11];
    let configs = 160;
    for i in 0..configs {
        let k = sizes[i % 4];
        let d = sizes[(i / 4) % 4];
        let ek = d * (k - 1) + 1;
        let stride = rng.random_range(1..=2);
        let pad = if rng.random_bool(0.5) { d * (k - 1) / 2 } else { rng.random_range(0..=ek / 2 + 1) };
        let min = ek.saturating_sub(2 * pad).max(1);
        let (h, w) = (rng.random_range(min..min + 10), rng.random_range(min..min + 10));
        let (n, cin, cout) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=9));
        let x = Tensor::from_fn((n, cin, h, w), |_, _, _, _| rng.random_range(-1.0..1.0f32));
        let wt = Tensor::from_fn((cout, cin, k, k), |_, _, _, _| rng.random_range(-1.0..1.0f32));
        let bias = rng
            .random_bool(0.5)
            .then(|| Tensor::from_fn((1, cout, 1, 1), |_, _, _, _| rng.random_range(-1.0..1.0f32)));
        let got = conv2d_forward(&x, &wt, bias.as_ref(), ConvGeom::new(stride, pad, d)).map_err(|e| e.to_string())?;
        let want = naive_conv(&x, &wt, bias.as_ref().map(|b| b.data()), stride, pad, d);
        ensure!(got.shape() == want.shape(), "config {i}: shape {:?} vs {:?}", got.shape(), want.shape());
        let same = got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "config {i} (k={k} d={d} s={stride} p={pad} {h}x{w}): not bit-identical");
    }
    let elapsed = t0.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{configs} configs over kernels and dilations {{1,3,7,11}} bit-identical in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// Criterion 2 -------------------------------------------------------------

fn criterion_gradients() -> Outcome {
    let t0 = Instant::now();
    let stdout = cli_ok(&["gradcheck"])?;
    let elapsed = t0.elapsed();
    let mut seen = BTreeMap::new();
    for line in stdout.lines().filter(|l| l.contains("group=")) {
        let name = line.split_whitespace().next().unwrap_or_default().to_string();
        let f = fields(line, "group")?;
        let err = num(&f, "max_rel_error")?;
        ensure!(err < 1e-4, "{name}: max relative error {err:e}");
        seen.insert(name, err);
    }
    let required = [
        "conv2d",
        "batchnorm_train",
        "batchnorm_eval",
        "elementwise",
        "gates",
        "concat_upsample",
        "pool",
        "bce_dice",
        "conv_bn_relu",
        "residual",
        "channel_attention",
        "spatial_attention",
        "mkdc",
        "decoder",
        "msff",
        "model",
    ];
    for r in required {
        ensure!(seen.contains_key(r), "case {r} missing from gradcheck output");
    }
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    let worst = seen.values().cloned().fold(0.0, f64::max);
    Ok(format!(
        "{} cases, worst relative error {worst:.2e}, {:.0}s",
        seen.len(),
        elapsed.as_secs_f64()
    ))
}

// Criterion 3 -------------------------------------------------------------

fn criterion_shapes() -> Outcome {
    let (net, store) = MkdcNet::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for size in [32, 64, 128, 256] {
        let x = Tensor::from_fn((1, 3, size, size), |_, _, _, _| rng.random_range(0.0..1.0f32));
        let y = net.predict(&store, x).map_err(|e| e.to_string())?;
        ensure!(y.shape() == Shape4::new(1, 1, size, size), "{size}: output {:?}", y.shape());
        ensure!(
            y.data().iter().all(|&v| v > 0.0 && v < 1.0),
            "{size}: values outside (0, 1)"
        );
    }
    let shapes = 30;
    for i in 0..shapes {
        let r = [1, 2, 4][rng.random_range(0..3)];
        let cout = r * rng.random_range(1..=3);
        let cin = rng.random_range(1..=5);
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=40), rng.random_range(1..=40));
        let mut store = ParamStore::new();
        let block = Mkdc::new(&mut Builder::new(&mut store, i), "m", &MkdcConfig::new(cin, cout).with_reduction(r))
            .map_err(|e| e.to_string())?;
        let mode = if i % 2 == 0 { Mode::Train } else { Mode::Eval };
        let mut g = Graph::new(&store, mode);
        let x = g.input(Tensor::from_fn((n, cin, h, w), |_, _, _, _| rng.random_range(-1.0..1.0f32)));
        let y = block.forward(&mut g, x).map_err(|e| e.to_string())?;
        ensure!(
            g.value(y).shape() == Shape4::new(n, cout, h, w),
            "MKDC {cin}->{cout} on {n}x{h}x{w}: {:?}",
            g.value(y).shape()
        );
    }
    Ok(format!("outputs (1,1,s,s) in (0,1) for s in 32..256; MKDC dims kept on {shapes} random shapes"))
}

// Criterion 4 -------------------------------------------------------------

/// Count ratio; an empty denominator scores 1, the limit of the smoothed form.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs = 10_000;
    let mut report = MetricReport::new(0.5);
    let mut iou_sum = 0.0;
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let density = rng.random_range(0.0..1.0);
        let target = Tensor::from_fn((1, 1, 8, 8), |_, _, _, _| if rng.random_bool(density) { 1.0f32 } else { 0.0 });
        let pred = Tensor::from_fn((1, 1, 8, 8), |_, _, _, _| rng.random_range(0.0..1.0f32));
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &t) in pred.data().iter().zip(target.data()) {
            match (p >= 0.5, t == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let want = [
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(tp, tp + fp + fn_),
            ratio(tp, tp + fn_),
            ratio(tp, tp + fp),
            ratio(tp + tn, 64),
            ratio(5 * tp, 5 * tp + 4 * fn_ + fp),
        ];
        iou_sum += want[1];
        let c = confusion(&pred, &target, 0.5).map_err(|e| e.to_string())?;
        let s = c.scores();
        let got = [s.dsc, s.iou, s.recall, s.precision, s.accuracy, s.f2];
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            worst = worst.max((g - w).abs());
            ensure!((g - w).abs() < 1e-6, "pair {i} metric {k}: {g} vs {w} (tp={tp} fp={fp} fn={fn_})");
        }
        let identity = 2.0 * s.iou / (1.0 + s.iou);
        ensure!((s.dsc - identity).abs() < 1e-6, "pair {i}: DSC {} vs 2IoU/(1+IoU) {identity}", s.dsc);
        if tp > 0 {
            let (p, r) = (s.precision, s.recall);
            let f2 = 5.0 * p * r / (4.0 * p + r);
            ensure!((s.f2 - f2).abs() < 1e-6, "pair {i}: F2 {} vs 5PR/(4P+R) {f2}", s.f2);
        }
        report.push(format!("p{i}"), c);
    }
    report.finish().map_err(|e| e.to_string())?;
    let miou = iou_sum / pairs as f64;
    ensure!((report.mean.iou - miou).abs() < 1e-6, "mIoU {} vs {miou}", report.mean.iou);
    Ok(format!("{pairs} random 8x8 pairs, max deviation {worst:.1e}; mIoU, DSC/IoU and F2 identities hold"))
}

// Criterion 5 -------------------------------------------------------------

fn criterion_convergence() -> Outcome {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let out = tmp.path().join("runs");
    cli_ok(&["synth", "--n", "200", "--size", "64", "--seed", "7", "--out", path_str(&data)])?;
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"trunk_width": 32}, "image_size": 64, "epochs": 20, "batch_size": 8, "optimizer": {"lr": 0.001}}"#,
    );
    cli_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&data),
        "--out",
        path_str(&out),
        "--seed",
        "7",
        "--quiet",
    ])?;
    let run = only_run_dir(&out)?;
    let report = tmp.path().join("test.csv");
    let stdout = cli_ok(&[
        "eval",
        "--ckpt",
        path_str(&run.join("best.ckpt")),
        "--data",
        path_str(&data),
        "--split",
        "test",
        "--report",
        path_str(&report),
    ])?;
    let f = fields(&stdout, "dsc")?;
    let dsc = num(&f, "dsc")?;
    ensure!(num(&f, "n")? == 20.0, "test split has {} images", f["n"]);
    let history = parse_history(&fs::read_to_string(run.join("history.csv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(history.len() == 20, "{} epochs recorded", history.len());
    let (first, last) = (history[0].train_loss, history[19].train_loss);
    let elapsed = t0.elapsed();
    ensure!(dsc >= 0.85, "test DSC {dsc:.4} < 0.85");
    ensure!(last < 0.5 * first, "final train loss {last:.4} not below half of initial {first:.4}");
    ensure!(elapsed < Duration::from_secs(1800), "took {elapsed:?}");
    Ok(format!(
        "test DSC {dsc:.4}, train loss {first:.3} -> {last:.3}, {:.0}s",
        elapsed.as_secs_f64()
    ))
}

// Criterion 6 -------------------------------------------------------------

fn criterion_ablation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("ablation");
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"trunk_width": 16}, "image_size": 32, "epochs": 5, "batch_size": 8, "optimizer": {"lr": 0.001}}"#,
    );
    cli_ok(&[
        "ablate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--synth-n",
        "40",
        "--seed",
        "1",
        "--quiet",
    ])?;
    let csv = fs::read_to_string(out.join("ablation.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure!(lines.first() == Some(&"method,dsc,miou,recall,precision"), "header {:?}", lines.first());
    let labels = [
        "MKDCNet w/o Multiple Kernel Dilated Convolution",
        "MKDCNet w/o Multiscale Feature Fusion",
        "MKDCNet w/o Multiple Kernel Dilated Convolution & Multiscale Feature Fusion",
        "MKDCNet",
    ];
    ensure!(lines.len() == 5, "{} lines in ablation.csv", lines.len());
    for (line, label) in lines[1..].iter().zip(labels) {
        let cells: Vec<&str> = line.split(',').collect();
        ensure!(cells.len() == 5 && cells[0] == label, "row {line:?}, expected label {label:?}");
        for c in &cells[1..] {
            let v: f64 = c.parse().map_err(|e| format!("{c}: {e}"))?;
            ensure!((0.0..=1.0).contains(&v), "{label}: value {v}");
        }
    }
    let runs: Vec<PathBuf> = fs::read_dir(&out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("history.csv").exists())
        .collect();
    ensure!(runs.len() == 4, "{} run directories", runs.len());
    for r in &runs {
        let h = parse_history(&fs::read_to_string(r.join("history.csv")).unwrap()).map_err(|e| e.to_string())?;
        ensure!(h.len() == 5, "{}: {} epochs", r.display(), h.len());
    }
    Ok("four variants trained 5 epochs each; ablation.csv has the four labelled rows".into())
}

// Criterion 7 -------------------------------------------------------------

const TINY: &str = r#"{"model": {"encoder_widths": [4, 8, 8, 8], "trunk_width": 8}, "image_size": 32, "epochs": 3, "batch_size": 4, "optimizer": {"lr": 0.001}}"#;

fn train_tiny(tmp: &Path, data: &Path, out: &str, seed: &str) -> Result<PathBuf, String> {
    let cfg = write_config(tmp, TINY);
    let out = tmp.join(out);
    cli_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(data),
        "--out",
        path_str(&out),
        "--seed",
        seed,
        "--quiet",
    ])?;
    only_run_dir(&out)
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    cli_ok(&["synth", "--n", "24", "--size", "32", "--seed", "5", "--out", path_str(&data)])?;
    let a = train_tiny(tmp.path(), &data, "a", "11")?;
    let b = train_tiny(tmp.path(), &data, "b", "11")?;
    let c = train_tiny(tmp.path(), &data, "c", "12")?;
    ensure!(a.file_name() == b.file_name(), "run names differ: {a:?} vs {b:?}");
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    for f in ["history.csv", "best.ckpt", "last.ckpt", "split.txt", "test_metrics.csv"] {
        ensure!(read(a.join(f))? == read(b.join(f))?, "{f} differs between identical runs");
    }
    // The echoed configs differ only in the output directory.
    let config = |d: &Path| -> Result<Value, String> {
        let mut v: Value = serde_json::from_slice(&read(d.join("config.json"))?).map_err(|e| e.to_string())?;
        v.as_object_mut().unwrap().remove("out_dir");
        Ok(v)
    };
    ensure!(config(&a)? == config(&b)?, "config.json differs beyond out_dir");
    ensure!(
        read(a.join("last.ckpt"))? != read(c.join("last.ckpt"))?,
        "a different seed produced the same checkpoint"
    );
    Ok("history, checkpoints and reports byte-identical across two runs; a new seed changes them".into())
}

// Criterion 8 -------------------------------------------------------------

fn f(v: &Value, path: &str) -> Result<f64, String> {
    path.split('.')
        .fold(Some(v), |v, k| v.and_then(|v| v.get(k)))
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("config field {path} missing or not a number"))
}

fn criterion_protocol() -> Outcome {
    let echo: Value = serde_json::from_str(&cli_ok(&["config"])?).map_err(|e| e.to_string())?;
    let exact = [
        ("optimizer.lr", 1e-4),
        ("batch_size", 16.0),
        ("image_size", 256.0),
        ("split.train", 0.8),
        ("split.valid", 0.1),
        ("split.test", 0.1),
        ("loss.bce_weight", 1.0),
        ("loss.dice_weight", 1.0),
    ];
    for (path, want) in exact {
        let got = f(&echo, path)?;
        ensure!((got - want).abs() < 1e-12, "{path} = {got}, expected {want}");
    }
    let factor = f(&echo, "scheduler.factor")?;
    ensure!(factor > 0.0 && factor < 1.0, "scheduler.factor {factor}");
    ensure!(f(&echo, "scheduler.patience")? >= 1.0, "scheduler.patience");
    ensure!(f(&echo, "scheduler.min_lr")? < 1e-4, "scheduler.min_lr");
    ensure!(
        f(&echo, "early_stopping.patience")? > f(&echo, "scheduler.patience")?,
        "early stopping must outlast the plateau patience"
    );
    for path in ["augment.rotation_degrees", "augment.p_rotate", "augment.p_hflip", "augment.p_vflip", "augment.coarse_dropout.p", "augment.coarse_dropout.max_holes"] {
        ensure!(f(&echo, path)? > 0.0, "{path} disabled");
    }
    ensure!(SplitRatios::default().counts(1000) == [800, 100, 100], "80:10:10 counts");
    ensure!(SplitRatios::two_way(880, 120).counts(1000) == [880, 0, 120], "880/120 counts");

    // The effective configuration is echoed verbatim into the run directory.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    cli_ok(&["synth", "--n", "12", "--size", "32", "--seed", "2", "--out", path_str(&data)])?;
    let cfg_path = write_config(tmp.path(), TINY);
    let mut expected: Value =
        serde_json::from_str(&cli_ok(&["config", "--config", path_str(&cfg_path), "--seed", "4"])?).map_err(|e| e.to_string())?;
    let run = {
        let out = tmp.path().join("runs");
        cli_ok(&[
            "train",
            "--config",
            path_str(&cfg_path),
            "--data",
            path_str(&data),
            "--out",
            path_str(&out),
            "--seed",
            "4",
            "--quiet",
        ])?;
        only_run_dir(&out)?
    };
    let mut echoed: Value =
        serde_json::from_str(&fs::read_to_string(run.join("config.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(
        run.file_name().and_then(|n| n.to_str()) == expected["run_name"].as_str(),
        "run directory {run:?} vs run_name {}",
        expected["run_name"]
    );
    for k in ["run_name", "data_dir", "out_dir"] {
        expected.as_object_mut().unwrap().remove(k);
        echoed.as_object_mut().unwrap().remove(k);
    }
    ensure!(echoed == expected, "run config.json differs from the effective config");
    Ok("lr 1e-4, batch 16, 80:10:10 and 880/120, BCE+Dice, plateau, early stop, rotate/flips/dropout; config echoed".into())
}

// Criterion 9 -------------------------------------------------------------

fn criterion_fps() -> Outcome {
    let stdout = cli_ok(&["bench", "--size", "256", "--iters", "5", "--warmup", "1"])?;
    let f = fields(&stdout, "fps")?;
    ensure!(f.get("batch").map(String::as_str) == Some("1"), "batch {:?}", f.get("batch"));
    let (mean, fps) = (num(&f, "mean_ms")?, num(&f, "fps")?);
    ensure!(mean.is_finite() && mean > 0.0, "mean latency {mean}");
    ensure!(((fps * mean / 1000.0) - 1.0).abs() < 1e-3, "fps {fps} inconsistent with mean {mean} ms");
    Ok(format!("batch 1 at 256x256: mean {mean:.1} ms, {fps:.2} FPS"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "conv2d oracle", criterion_conv_oracle),
        (2, "gradient suite", criterion_gradients),
        (3, "shape invariants", criterion_shapes),
        (4, "metric oracle", criterion_metrics),
        (5, "desk-scale convergence", criterion_convergence),
        (6, "ablation harness", criterion_ablation),
        (7, "determinism", criterion_determinism),
        (8, "protocol defaults", criterion_protocol),
        (9, "fps bench", criterion_fps),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
