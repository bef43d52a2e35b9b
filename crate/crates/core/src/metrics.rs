//! Hard-threshold segmentation metrics and latency measurement.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const METRIC_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn scores(&self) -> Scores {
        scores(self, METRIC_EPS)
    }
}

/// A pixel is predicted positive iff `pred >= threshold`; targets are
/// positive iff `target >= 0.5`.
pub fn confusion<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<ConfusionCounts> {
    pred.expect_same_shape(target, "confusion")?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (p.as_f64() >= threshold, t.as_f64() >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub dsc: f64,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f2: f64,
}

impl Scores {
    fn values(&self) -> [f64; 6] {
        [self.dsc, self.iou, self.recall, self.precision, self.accuracy, self.f2]
    }
}

pub fn scores(c: &ConfusionCounts, eps: f64) -> Scores {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let total = tp + fp + fn_ + tn;
    Scores {
        dsc: (2.0 * tp + eps) / (2.0 * tp + fp + fn_ + eps),
        iou: (tp + eps) / (tp + fp + fn_ + eps),
        recall: (tp + eps) / (tp + fn_ + eps),
        precision: (tp + eps) / (tp + fp + eps),
        accuracy: if total > 0.0 { (tp + tn) / total } else { 1.0 },
        f2: (5.0 * tp + eps) / (5.0 * tp + 4.0 * fn_ + fp + eps),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub fps: f64,
    pub samples: usize,
}

impl Timing {
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::InvalidArgument("timing needs at least one sample".into()));
        }
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            mean_ms: mean,
            std_ms: var.sqrt(),
            fps: if mean > 0.0 { 1000.0 / mean } else { f64::INFINITY },
            samples: ms.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub id: String,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub eps: f64,
    pub images: Vec<ImageScores>,
    pub mean: Scores,
    pub timing: Option<Timing>,
}

pub const CSV_HEADER: &str = "id,dsc,miou,recall,precision,accuracy,f2";

impl MetricReport {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            eps: METRIC_EPS,
            images: Vec::new(),
            mean: Scores::default(),
            timing: None,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, counts: ConfusionCounts) {
        self.images.push(ImageScores {
            id: id.into(),
            counts,
            scores: scores(&counts, self.eps),
        });
    }

    /// Recomputes the means in image order.
    pub fn finish(&mut self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("metric report has no images".into()));
        }
        let mut acc = [0.0f64; 6];
        for img in &self.images {
            for (a, v) in acc.iter_mut().zip(img.scores.values()) {
                *a += v;
            }
        }
        let n = self.images.len() as f64;
        self.mean = Scores {
            dsc: acc[0] / n,
            iou: acc[1] / n,
            recall: acc[2] / n,
            precision: acc[3] / n,
            accuracy: acc[4] / n,
            f2: acc[5] / n,
        };
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let row = |out: &mut String, id: &str, s: &Scores| {
            let _ = write!(out, "{id}");
            for v in s.values() {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        };
        for img in &self.images {
            row(&mut out, &img.id, &img.scores);
        }
        row(&mut out, "mean", &self.mean);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Calls `f` `warmup` times untimed, then `iters` times timed.
pub fn fps_bench(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<(Timing, Vec<f64>)> {
    if iters == 0 {
        return Err(Error::InvalidArgument("bench needs iters >= 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        f()?;
        samples.push(t0.elapsed().as_secs_f64() * 1000.0);
    }
    Ok((Timing::from_samples(&samples)?, samples))
}
