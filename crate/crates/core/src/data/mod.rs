//! Samples, on-disk corpora, splits, augmentation and batching.

pub mod augment;
pub mod netpbm;
pub mod split;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ops::resample;
use crate::rng;
use crate::tensor::{stack_batch, Tensor};

pub use augment::{augment, AugmentConfig, CoarseDropout};
pub use split::{split, SplitManifest, SplitRatios};
pub use synth::synth_dataset;

/// An RGB image `(1, 3, H, W)` in `[0, 1]` with a binary mask `(1, 1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let (i, m) = (self.image.shape(), self.mask.shape());
        if i.n != 1 || i.c != 3 || m.n != 1 || m.c != 1 || (i.h, i.w) != (m.h, m.w) {
            return Err(Error::ShapeMismatch {
                op: "sample",
                left: i,
                right: m,
            });
        }
        if !self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidArgument(format!("{}: mask is not binary", self.id)));
        }
        Ok(())
    }

    /// Bilinear image and nearest-neighbour mask resize.
    pub fn resized(&self, h: usize, w: usize) -> Result<Sample> {
        Ok(Sample {
            id: self.id.clone(),
            image: resize_image(&self.image, h, w)?,
            mask: resize_mask(&self.mask, h, w)?,
        })
    }
}

pub fn resize_image(img: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    resample::resize_bilinear(img, h, w)
}

pub fn resize_mask(mask: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    resample::resize_nearest(mask, h, w)
}

/// `<root>/images/<id>.ppm` and `<root>/masks/<id>.pgm`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
}

impl Corpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.ppm"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.pgm"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("split.txt")
    }

    /// Ids of all images, sorted.
    pub fn ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("images");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "ppm") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let s = Sample {
            id: id.to_string(),
            image: netpbm::load_image(&self.image_path(id))?,
            mask: netpbm::load_mask(&self.mask_path(id))?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Loads `ids`, resizing to `size x size` where needed.
    pub fn load_all(&self, ids: &[String], size: Option<usize>) -> Result<Vec<Sample>> {
        ids.iter()
            .map(|id| {
                let s = self.load(id)?;
                match size {
                    Some(n) if (s.image.shape().h, s.image.shape().w) != (n, n) => s.resized(n, n),
                    _ => Ok(s),
                }
            })
            .collect()
    }

    pub fn save(&self, sample: &Sample) -> Result<()> {
        fs::create_dir_all(self.root.join("images"))?;
        fs::create_dir_all(self.root.join("masks"))?;
        netpbm::save_image(&sample.image, &self.image_path(&sample.id))?;
        netpbm::save_mask(&sample.mask, &self.mask_path(&sample.id))?;
        Ok(())
    }

    pub fn save_manifest(&self, m: &SplitManifest) -> Result<()> {
        fs::write(self.manifest_path(), m.to_text())?;
        Ok(())
    }

    /// Reads `split.txt` if present.
    pub fn load_manifest(&self) -> Result<Option<SplitManifest>> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(SplitManifest::from_text(&fs::read_to_string(p)?)?))
    }

    pub fn exists(root: &Path) -> bool {
        root.join("images").is_dir() && root.join("masks").is_dir()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
}

/// Visiting order for one epoch, reproducible from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[b"shuffle", &epoch.to_le_bytes()]));
    order
}

/// Stacks samples in `order` into batches; the last batch may be partial.
pub fn batches(samples: &[Sample], order: &[usize], batch_size: usize) -> Result<Vec<Batch>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty corpus".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let picked: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            Ok(Batch {
                ids: picked.iter().map(|s| s.id.clone()).collect(),
                images: stack_batch(&picked.iter().map(|s| &s.image).collect::<Vec<_>>())?,
                masks: stack_batch(&picked.iter().map(|s| &s.mask).collect::<Vec<_>>())?,
            })
        })
        .collect()
}
