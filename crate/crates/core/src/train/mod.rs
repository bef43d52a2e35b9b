//! Training loop, evaluation and the per-run artifact layout.
//!
//! A run directory holds `config.json`, `history.csv`, `best.ckpt` (lowest
//! monitored loss) and `last.ckpt` (full optimizer state, used to resume).

pub mod optim;
pub mod schedule;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{augment, batches, epoch_order, Batch, Sample};
use crate::error::{Error, Result};
use crate::loss::{bce_dice_loss, LossConfig};
use crate::metrics::{confusion, scores, MetricReport, Timing, METRIC_EPS};
use crate::model::{Checkpoint, MkdcNet};
use crate::ops::norm::Mode;
use crate::ops::tape::Graph;
use crate::params::ParamStore;
use crate::tensor::{stack_batch, Tensor};

pub use optim::Adam;
pub use schedule::{EarlyStopper, PlateauScheduler};

/// JSON has no NaN or infinity; serde_json writes them as `null`.
pub(crate) fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub(crate) fn null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,valid_loss,valid_dsc,valid_miou,lr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub valid_loss: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub valid_dsc: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub valid_miou: f64,
    pub lr: f64,
}

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.valid_loss, r.valid_dsc, r.valid_miou, r.lr
        );
    }
    out
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Parse {
            offset: 0,
            reason: "unexpected history header".into(),
        });
    }
    let mut offset = HISTORY_HEADER.len() + 1;
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            offset,
            reason: format!("bad history row {line:?}"),
        };
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_loss: num(1)?,
            valid_loss: num(2)?,
            valid_dsc: num(3)?,
            valid_miou: num(4)?,
            lr: num(5)?,
        });
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Training and validation samples, already resized.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `last.ckpt` in the run directory.
    pub resume: bool,
    /// Stop after this many completed epochs, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub stopped_early: bool,
    pub run_dir: PathBuf,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    epochs_done: usize,
    lr: f64,
    adam_t: u64,
    scheduler: PlateauScheduler,
    stopper: EarlyStopper,
    best_epoch: usize,
    #[serde(deserialize_with = "null_as_inf")]
    best_monitor: f64,
    history: Vec<EpochRecord>,
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    net: &MkdcNet,
    store: &mut ParamStore<f32>,
    adam: &mut Adam,
    batch: &Batch,
    loss_cfg: LossConfig,
) -> Result<f64> {
    let (loss, grads, updates) = {
        let mut g = Graph::new(store, Mode::Train);
        let x = g.input(batch.images.clone());
        let y = net.forward(&mut g, x)?;
        let l = g.bce_dice(y, &batch.masks, loss_cfg)?;
        let loss = f64::from(g.value(l).data()[0]);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss on batch [{}]", batch.ids.join(" "))));
        }
        let grads = g.backward(l)?.into_params();
        (loss, grads, g.take_buffer_updates())
    };
    adam.step(store, &grads).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} on batch [{}]", batch.ids.join(" "))),
        other => other,
    })?;
    store.apply_buffer_updates(updates)?;
    Ok(loss)
}

/// Mean loss, DSC and IoU over `samples` with eval-mode normalization.
pub fn validate(
    net: &MkdcNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
    batch_size: usize,
    loss_cfg: &LossConfig,
    threshold: f64,
) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let order: Vec<usize> = (0..samples.len()).collect();
    let (mut loss, mut dsc, mut iou) = (0.0, 0.0, 0.0);
    for b in batches(samples, &order, batch_size)? {
        let pred = net.predict(store, b.images.clone())?;
        loss += bce_dice_loss(&pred, &b.masks, loss_cfg)? * b.ids.len() as f64;
        for i in 0..b.ids.len() {
            let s = scores(&confusion(&pred.batch_item(i), &b.masks.batch_item(i), threshold)?, METRIC_EPS);
            dsc += s.dsc;
            iou += s.iou;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, dsc / n, iou / n))
}

/// Per-image metrics with batch-1 eval-mode forward passes; the forward
/// time of each image feeds the timing summary.
pub fn evaluate(net: &MkdcNet, store: &ParamStore<f32>, samples: &[Sample], threshold: f64) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let mut report = MetricReport::new(threshold);
    let mut ms = Vec::with_capacity(samples.len());
    for s in samples {
        let t0 = Instant::now();
        let pred = net.predict(store, s.image.clone())?;
        ms.push(t0.elapsed().as_secs_f64() * 1000.0);
        report.push(s.id.clone(), confusion(&pred, &s.mask, threshold)?);
    }
    report.finish()?;
    report.timing = Some(Timing::from_samples(&ms)?);
    Ok(report)
}

fn augmented_batch(samples: &[Sample], idx: &[usize], cfg: &RunConfig, epoch: u64) -> Result<Batch> {
    let aug: Vec<Sample> = idx.iter().map(|&i| augment(&samples[i], &cfg.augment, epoch)).collect();
    Ok(Batch {
        ids: aug.iter().map(|s| s.id.clone()).collect(),
        images: stack_batch(&aug.iter().map(|s| &s.image).collect::<Vec<_>>())?,
        masks: stack_batch(&aug.iter().map(|s| &s.mask).collect::<Vec<_>>())?,
    })
}

fn save_last(path: &Path, store: &ParamStore<f32>, cfg: &RunConfig, adam: &Adam, state: &TrainState) -> Result<()> {
    let mut ck = Checkpoint::from_store(store, &cfg.model)?;
    for (name, m) in &adam.m {
        ck.tensors.insert(format!("adam.m/{name}"), m.clone());
    }
    for (name, v) in &adam.v {
        ck.tensors.insert(format!("adam.v/{name}"), v.clone());
    }
    ck.meta["optimizer_state"] = serde_json::Value::Bool(true);
    ck.meta["train"] = serde_json::to_value(state)?;
    ck.save(path)
}

fn load_last(path: &Path, store: &mut ParamStore<f32>, adam: &mut Adam) -> Result<TrainState> {
    let ck = Checkpoint::load(path)?;
    ck.load_into(store)?;
    for (name, t) in &ck.tensors {
        if let Some(p) = name.strip_prefix("adam.m/") {
            adam.m.insert(p.to_string(), t.clone());
        } else if let Some(p) = name.strip_prefix("adam.v/") {
            adam.v.insert(p.to_string(), t.clone());
        }
    }
    let state: TrainState = serde_json::from_value(
        ck.meta
            .get("train")
            .cloned()
            .ok_or_else(|| Error::Config(format!("{} has no training state", path.display())))?,
    )?;
    adam.t = state.adam_t;
    adam.lr = state.lr;
    Ok(state)
}

/// Runs the full protocol in `run_dir`: seeded shuffling and augmentation,
/// Adam, plateau scheduling and early stopping on the validation loss (the
/// training loss when there is no validation split), best and last
/// checkpoints, and the history file rewritten after every epoch.
pub fn train(
    cfg: &RunConfig,
    data: &TrainData,
    run_dir: &Path,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("config.json"), cfg.to_json()?)?;
    let (net, mut store) = MkdcNet::new(cfg.model.clone())?;
    let mut adam = Adam::new(cfg.optimizer);
    let last_path = run_dir.join("last.ckpt");
    let mut state = if opts.resume && last_path.exists() {
        load_last(&last_path, &mut store, &mut adam)?
    } else {
        TrainState {
            epochs_done: 0,
            lr: cfg.optimizer.lr,
            adam_t: 0,
            scheduler: PlateauScheduler::new(cfg.scheduler),
            stopper: EarlyStopper::new(cfg.early_stopping),
            best_epoch: 0,
            best_monitor: f64::INFINITY,
            history: Vec::new(),
        }
    };
    let mut stopped_early = false;
    while state.epochs_done < cfg.epochs {
        if opts.stop_after.is_some_and(|k| state.epochs_done >= k) {
            break;
        }
        let epoch = state.epochs_done + 1;
        adam.lr = state.lr;
        let order = epoch_order(data.train.len(), cfg.seed, epoch as u64);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = augmented_batch(&data.train, idx, cfg, epoch as u64)?;
            let loss = match train_step(&net, &mut store, &mut adam, &batch, cfg.loss) {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => {
                    fs::write(
                        run_dir.join("nonfinite_batch.txt"),
                        format!("epoch {epoch}\n{}\n", batch.ids.join("\n")),
                    )?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            total += loss * idx.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let (valid_loss, valid_dsc, valid_miou) =
            validate(&net, &store, &data.valid, cfg.batch_size, &cfg.loss, cfg.threshold)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            valid_dsc,
            valid_miou,
            lr: state.lr,
        };
        let monitor = if data.valid.is_empty() { train_loss } else { valid_loss };
        if monitor < state.best_monitor {
            state.best_monitor = monitor;
            state.best_epoch = epoch;
            let mut ck = Checkpoint::from_store(&store, &cfg.model)?;
            ck.meta["epoch"] = epoch.into();
            ck.save(&run_dir.join("best.ckpt"))?;
        }
        state.lr = state.scheduler.step(monitor, state.lr);
        let stop = state.stopper.step(monitor);
        state.history.push(record.clone());
        state.epochs_done = epoch;
        state.adam_t = adam.t;
        fs::write(run_dir.join("history.csv"), history_csv(&state.history))?;
        save_last(&last_path, &store, cfg, &adam, &state)?;
        on_epoch(&record);
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        history: state.history,
        best_epoch: state.best_epoch,
        best_monitor: state.best_monitor,
        stopped_early,
        run_dir: run_dir.to_path_buf(),
    })
}

/// Eval-mode predictions for `samples` stacked into one batch.
pub fn predict_all(net: &MkdcNet, store: &ParamStore<f32>, samples: &[Sample]) -> Result<Tensor<f32>> {
    let imgs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    net.predict(store, stack_batch(&imgs)?)
}
