use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mkdcnet::config::RunConfig;
use mkdcnet::data::{netpbm, resize_image, split, synth_dataset, Corpus, Sample, SplitManifest, SplitRatios};
use mkdcnet::gradsuite;
use mkdcnet::metrics::{fps_bench, MetricReport, Scores};
use mkdcnet::model::{Checkpoint, INPUT_MULTIPLE};
use mkdcnet::ops::gradcheck::GradCheckConfig;
use mkdcnet::ops::norm::Mode;
use mkdcnet::ops::tape::Graph;
use mkdcnet::train::{self, EpochRecord, TrainData, TrainOptions};
use mkdcnet::{MkdcNet, ModelConfig, ParamStore, Tensor};

use crate::error::{at, require, CliError, CliResult};
use crate::plot;
use crate::{AblateArgs, BenchArgs, ConfigArgs, EvalArgs, GradcheckArgs, InferArgs, RunArgs, SynthArgs, TrainArgs};

/// Rows of the ablation table as (label, use_mkdc, use_msff).
pub const ABLATION_ROWS: [(&str, bool, bool); 4] = [
    ("MKDCNet w/o Multiple Kernel Dilated Convolution", false, true),
    ("MKDCNet w/o Multiscale Feature Fusion", true, false),
    ("MKDCNet w/o Multiple Kernel Dilated Convolution & Multiscale Feature Fusion", false, false),
    ("MKDCNet", true, true),
];

pub const ABLATION_HEADER: &str = "method,dsc,miou,recall,precision";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::new("io", format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn parse_ratios(text: &str) -> CliResult<SplitRatios> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new("argument", format!("ratios {text:?}: {e}")))?;
    let [train, valid, test] = parts[..] else {
        return Err(CliError::new("argument", format!("ratios {text:?}: expected three values")));
    };
    let r = SplitRatios { train, valid, test };
    r.validate()?;
    Ok(r)
}

fn load_checkpoint(path: &Path) -> CliResult<(MkdcNet, ParamStore<f32>)> {
    require(path, "checkpoint")?;
    let ck = at(path, Checkpoint::load(path))?;
    Ok(at(path, ck.restore())?)
}

/// `image_size` from the `config.json` written beside a training checkpoint.
fn run_image_size(ckpt: &Path) -> CliResult<Option<usize>> {
    let Some(p) = ckpt.parent().map(|d| d.join("config.json")).filter(|p| p.exists()) else {
        return Ok(None);
    };
    Ok(Some(at(&p, RunConfig::load(&p))?.image_size))
}

fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    require(dir, "corpus directory")?;
    if !Corpus::exists(dir) {
        return Err(CliError::new(
            "not_found",
            format!("{} has no images/ and masks/ subdirectories", dir.display()),
        ));
    }
    Ok(Corpus::new(dir))
}

fn load_samples(corpus: &Corpus, ids: &[String], size: Option<usize>) -> CliResult<Vec<Sample>> {
    for id in ids {
        require(&corpus.image_path(id), "image")?;
        require(&corpus.mask_path(id), "mask")?;
    }
    Ok(corpus.load_all(ids, size)?)
}

fn scores_line(s: &Scores) -> String {
    format!(
        "dsc={:.6} miou={:.6} recall={:.6} precision={:.6} accuracy={:.6} f2={:.6}",
        s.dsc, s.iou, s.recall, s.precision, s.accuracy, s.f2
    )
}

/// CSV report plus `.json` and `.svg` siblings.
fn write_report(report: &MetricReport, path: &Path) -> CliResult<()> {
    write(path, report.to_csv())?;
    write(&path.with_extension("json"), report.to_json()?)?;
    let m = &report.mean;
    let svg = plot::bars(
        "Mean scores",
        &["DSC", "mIoU", "Recall", "Precision", "Accuracy", "F2"],
        &[("mean".into(), vec![m.dsc, m.iou, m.recall, m.precision, m.accuracy, m.f2])],
    );
    write(&path.with_extension("svg"), svg)
}

fn write_history_plots(history: &[EpochRecord], dir: &Path) -> CliResult<()> {
    let series = |f: fn(&EpochRecord) -> f64| history.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    write(
        &dir.join("loss.svg"),
        plot::lines(
            "Loss",
            "epoch",
            &[("train", series(|r| r.train_loss)), ("valid", series(|r| r.valid_loss))],
        ),
    )?;
    write(
        &dir.join("valid_metrics.svg"),
        plot::lines(
            "Validation metrics",
            "epoch",
            &[("DSC", series(|r| r.valid_dsc)), ("mIoU", series(|r| r.valid_miou))],
        ),
    )?;
    write(
        &dir.join("lr.svg"),
        plot::lines("Learning rate", "epoch", &[("lr", series(|r| r.lr))]),
    )
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let ratios = parse_ratios(&a.ratios)?;
    let samples = synth_dataset(a.n, a.size, a.seed)?;
    let corpus = Corpus::new(&a.out);
    for s in &samples {
        at(&a.out, corpus.save(s))?;
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let manifest = split(&ids, ratios, a.seed)?;
    at(&corpus.manifest_path(), corpus.save_manifest(&manifest))?;
    println!(
        "corpus={} samples={} train={} valid={} test={}",
        a.out.display(),
        samples.len(),
        manifest.train.len(),
        manifest.valid.len(),
        manifest.test.len()
    );
    Ok(())
}

/// Config file (or defaults) with command-line overrides applied.
fn effective_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            require(p, "config")?;
            at(p, RunConfig::load(p))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}

fn run_config(a: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = effective_config(a.config.as_deref(), a.seed)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(d) = &a.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub best_epoch: usize,
    pub epochs: usize,
    pub stopped_early: bool,
    pub test: Option<MetricReport>,
}

/// Trains `cfg` on the corpus in `data_dir` inside `<out>/<run name>` and
/// scores the best checkpoint on the test split.
fn run_training(cfg: &RunConfig, data_dir: &Path, resume: bool, quiet: bool) -> CliResult<RunSummary> {
    let corpus = load_corpus(data_dir)?;
    let manifest = match at(&corpus.manifest_path(), corpus.load_manifest())? {
        Some(m) => m,
        None => split(&corpus.ids()?, cfg.split, cfg.seed)?,
    };
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let run_dir = out.join(cfg.run_name()?);
    fs::create_dir_all(&run_dir).map_err(|e| CliError::new("io", format!("{}: {e}", run_dir.display())))?;
    write(&run_dir.join("split.txt"), manifest.to_text())?;

    let size = Some(cfg.image_size);
    let data = TrainData {
        train: load_samples(&corpus, &manifest.train, size)?,
        valid: load_samples(&corpus, &manifest.valid, size)?,
    };
    let started = Instant::now();
    let total = cfg.epochs;
    let outcome = train::train(cfg, &data, &run_dir, &TrainOptions { resume, stop_after: None }, |r| {
        if !quiet {
            eprintln!(
                "epoch {}/{total} train_loss={:.5} valid_loss={:.5} valid_dsc={:.4} valid_miou={:.4} lr={:.2e} elapsed={:.1}s",
                r.epoch,
                r.train_loss,
                r.valid_loss,
                r.valid_dsc,
                r.valid_miou,
                r.lr,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    write_history_plots(&outcome.history, &run_dir)?;

    let test = if manifest.test.is_empty() {
        None
    } else {
        let (net, store) = load_checkpoint(&run_dir.join("best.ckpt"))?;
        let samples = load_samples(&corpus, &manifest.test, size)?;
        let report = train::evaluate(&net, &store, &samples, cfg.threshold)?;
        write_report(&report, &run_dir.join("test_metrics.csv"))?;
        Some(report)
    };
    Ok(RunSummary {
        run_dir,
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.last().map_or(0, |r| r.epoch),
        stopped_early: outcome.stopped_early,
        test,
    })
}

fn data_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.data_dir
        .clone()
        .ok_or_else(|| CliError::new("usage", "no corpus: pass --data or set data_dir in the config"))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = run_config(&a.run)?;
    let summary = run_training(&cfg, &data_dir(&cfg)?, a.resume, a.run.quiet)?;
    let mut line = format!(
        "run_dir={} epochs={} best_epoch={} stopped_early={}",
        summary.run_dir.display(),
        summary.epochs,
        summary.best_epoch,
        summary.stopped_early
    );
    if let Some(r) = &summary.test {
        line.push_str(&format!(" test_{}", scores_line(&r.mean).replace(' ', " test_")));
    }
    println!("{line}");
    Ok(())
}

fn resolve_manifest(a: &EvalArgs, corpus: &Corpus) -> CliResult<Option<SplitManifest>> {
    if let Some(p) = &a.manifest {
        require(p, "manifest")?;
        let text = fs::read_to_string(p).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
        return Ok(Some(at(p, SplitManifest::from_text(&text))?));
    }
    if let Some(p) = a.ckpt.parent().map(|d| d.join("split.txt")).filter(|p| p.exists()) {
        let text = fs::read_to_string(&p)?;
        return Ok(Some(at(&p, SplitManifest::from_text(&text))?));
    }
    Ok(at(&corpus.manifest_path(), corpus.load_manifest())?)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (net, store) = load_checkpoint(&a.ckpt)?;
    let corpus = load_corpus(&a.data)?;
    let ids = if a.split == "all" {
        corpus.ids()?
    } else {
        let m = resolve_manifest(a, &corpus)?.ok_or_else(|| {
            CliError::new("not_found", "no split manifest: pass --manifest or use --split all")
        })?;
        m.list(&a.split)?.to_vec()
    };
    if ids.is_empty() {
        return Err(CliError::new("argument", format!("split {} is empty", a.split)));
    }
    let size = match a.size {
        Some(s) => Some(s),
        None => run_image_size(&a.ckpt)?,
    };
    let samples = load_samples(&corpus, &ids, size)?;
    let report = train::evaluate(&net, &store, &samples, a.threshold)?;
    if let Some(p) = &a.report {
        write_report(&report, p)?;
    }
    println!("split={} n={} {}", a.split, report.images.len(), scores_line(&report.mean));
    Ok(())
}

fn round_up(v: usize) -> usize {
    v.div_ceil(INPUT_MULTIPLE) * INPUT_MULTIPLE
}

pub fn infer(a: &InferArgs) -> CliResult<()> {
    let (net, store) = load_checkpoint(&a.ckpt)?;
    require(&a.image, "image")?;
    let img = at(&a.image, netpbm::load_image(&a.image))?;
    let (h, w) = (img.shape().h, img.shape().w);
    let (mh, mw) = match a.size {
        Some(s) => (s, s),
        None => match run_image_size(&a.ckpt)? {
            Some(s) => (s, s),
            None => (round_up(h), round_up(w)),
        },
    };
    let x = if (mh, mw) == (h, w) { img } else { resize_image(&img, mh, mw)? };
    let prob = net.predict(&store, x.clone())?;
    if let Some(dir) = &a.dump_activations {
        dump_activations(&net, &store, &x, &prob, dir)?;
    }
    let prob = if (mh, mw) == (h, w) { prob } else { resize_image(&prob, h, w)? };
    let mask = prob.map(|p| if f64::from(p) >= a.threshold { 1.0 } else { 0.0 });
    if let Some(parent) = a.out_mask.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    at(&a.out_mask, netpbm::save_mask(&mask, &a.out_mask))?;
    if let Some(p) = &a.out_prob {
        at(p, netpbm::save_mask(&prob, p))?;
    }
    let fg = mask.sum() / (h * w) as f32;
    println!("mask={} height={h} width={w} foreground={fg:.6}", a.out_mask.display());
    Ok(())
}

fn dump_activations(net: &MkdcNet, store: &ParamStore<f32>, x: &Tensor<f32>, prob: &Tensor<f32>, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    let mut g = Graph::new(store, Mode::Eval);
    let xv = g.input(x.clone());
    let feats = net.encoder_forward(&mut g, xv)?;
    let mut named: Vec<(String, &Tensor<f32>)> = vec![("input".into(), x)];
    for (i, f) in feats.iter().enumerate() {
        named.push((format!("enc{}", i + 1), g.value(*f)));
    }
    named.push(("prob".into(), prob));
    for (name, t) in named {
        let mut bytes = Vec::new();
        t.write_dump(&mut bytes)?;
        write(&dir.join(format!("{name}.mkdt")), bytes)?;
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let filter = a.module.as_deref();
    let known: Vec<&str> = gradsuite::cases().iter().flat_map(|c| [c.name, c.group]).collect();
    if let Some(f) = filter {
        if !known.contains(&f) {
            let mut names: Vec<&str> = known.clone();
            names.sort();
            names.dedup();
            return Err(CliError::new(
                "argument",
                format!("unknown module {f:?}; expected one of {}", names.join(", ")),
            ));
        }
    }
    let cfg = GradCheckConfig {
        coords_per_tensor: a.coords,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let outcomes = gradsuite::run(filter, &cfg);
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(r) => {
                let worst = r.worst.as_ref().map_or("-".to_string(), |(n, i)| format!("{n}[{i}]"));
                println!(
                    "{:<20} group={:<7} max_rel_error={:.3e} worst={worst} coords={} time={:.2}s {}",
                    o.name,
                    o.group,
                    r.max_rel_error,
                    r.coords_checked,
                    o.elapsed.as_secs_f64(),
                    if o.passed() { "PASS" } else { "FAIL" }
                );
            }
            Err(e) => println!("{:<20} group={:<7} error={e} FAIL", o.name, o.group),
        }
        if !o.passed() {
            failed += 1;
        }
    }
    println!("tolerance={:e} cases={} failed={failed}", gradsuite::TOLERANCE, outcomes.len());
    if failed > 0 {
        return Err(CliError::new(
            "gradcheck",
            format!("{failed} of {} cases exceed tolerance {:e}", outcomes.len(), gradsuite::TOLERANCE),
        ));
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let (net, store) = match &a.ckpt {
        Some(p) => load_checkpoint(p)?,
        None => MkdcNet::new(ModelConfig::default())?,
    };
    net.check_input((1, 3, a.size, a.size).into())?;
    let x = Tensor::from_fn((1, 3, a.size, a.size), |_, c, h, w| ((c * 31 + h * 7 + w * 13) % 255) as f32 / 255.0);
    let (t, _) = fps_bench(a.warmup, a.iters, || net.predict(&store, x.clone()).map(|_| ()))?;
    println!(
        "batch=1 size={} warmup={} iters={} mean_ms={:.4} std_ms={:.4} fps={:.6} threads={}",
        a.size,
        a.warmup,
        t.samples,
        t.mean_ms,
        t.std_ms,
        t.fps,
        rayon::current_num_threads()
    );
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    let base = run_config(&a.run)?;
    let out = base.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let data = match &base.data_dir {
        Some(d) => d.clone(),
        None => {
            let dir = out.join("synth_data");
            if !Corpus::exists(&dir) {
                synth(&SynthArgs {
                    n: a.synth_n,
                    size: base.image_size,
                    seed: base.seed,
                    ratios: format!("{},{},{}", base.split.train, base.split.valid, base.split.test),
                    out: dir.clone(),
                })?;
            }
            dir
        }
    };
    let mut csv = format!("{ABLATION_HEADER}\n");
    let mut rows = Vec::new();
    for (label, mkdc, msff) in ABLATION_ROWS {
        let mut cfg = base.clone();
        cfg.model = cfg.model.with_ablation(mkdc, msff);
        cfg.out_dir = Some(out.clone());
        if !a.run.quiet {
            eprintln!("variant: {label}");
        }
        let summary = run_training(&cfg, &data, false, a.run.quiet)?;
        let m = summary
            .test
            .ok_or_else(|| CliError::new("argument", "ablation needs a non-empty test split"))?
            .mean;
        csv.push_str(&format!(
            "{label},{:.6},{:.6},{:.6},{:.6}\n",
            m.dsc, m.iou, m.recall, m.precision
        ));
        let short = match (mkdc, msff) {
            (false, true) => "w/o MKDC",
            (true, false) => "w/o MSFF",
            (false, false) => "w/o both",
            (true, true) => "full",
        };
        rows.push((short.to_string(), vec![m.dsc, m.iou, m.recall, m.precision]));
    }
    write(&out.join("ablation.csv"), &csv)?;
    write(
        &out.join("ablation.svg"),
        plot::bars("Ablation", &["DSC", "mIoU", "Recall", "Precision"], &rows),
    )?;
    print!("{csv}");
    Ok(())
}

pub fn config(a: &ConfigArgs) -> CliResult<()> {
    let cfg = effective_config(a.config.as_deref(), a.seed)?;
    cfg.validate()?;
    let mut v = serde_json::to_value(&cfg).map_err(|e| CliError::new("json", e.to_string()))?;
    v["run_name"] = cfg.run_name()?.into();
    println!("{}", serde_json::to_string_pretty(&v).map_err(|e| CliError::new("json", e.to_string()))?);
    Ok(())
}
