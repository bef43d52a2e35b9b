//! Seeded train/valid/test partitions and their text manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    /// Two-way split given as item counts out of `train + test`, e.g.
    /// `two_way(880, 120)`. The validation list stays empty.
    pub fn two_way(train: usize, test: usize) -> Self {
        let total = (train + test) as f64;
        Self {
            train: train as f64 / total,
            valid: 0.0,
            test: test as f64 / total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Item counts by largest remainder, so each differs from its exact
    /// share by less than one and the counts sum to `n`.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.valid, self.test].map(|r| r * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Sorts the ids, shuffles them with a stream derived from `seed`, then
/// cuts the shuffled list in train, valid, test order.
pub fn split(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitManifest> {
    ratios.validate()?;
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate id {}", w[0])));
    }
    sorted.shuffle(&mut rng::stream(seed, &[b"split"]));
    let [a, b, _] = ratios.counts(sorted.len());
    let test = sorted.split_off(a + b);
    let valid = sorted.split_off(a);
    Ok(SplitManifest {
        seed,
        ratios,
        train: sorted,
        valid,
        test,
    })
}

impl SplitManifest {
    pub fn list(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            for id in ids {
                let _ = writeln!(out, "{name} {id}");
            }
        }
        out
    }

    /// Parses `train|valid|test <id>` lines. Seed and ratios are not part
    /// of the text form; ratios are recomputed from the list sizes.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = SplitManifest {
            seed: 0,
            ratios: SplitRatios::default(),
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
        };
        let mut seen = BTreeSet::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                let (name, id) = trimmed.split_once(char::is_whitespace).ok_or_else(|| Error::Parse {
                    offset,
                    reason: format!("manifest line {trimmed:?} needs a split and an id"),
                })?;
                let id = id.trim().to_string();
                if !seen.insert(id.clone()) {
                    return Err(Error::Parse {
                        offset,
                        reason: format!("duplicate id {id}"),
                    });
                }
                match name {
                    "train" => m.train.push(id),
                    "valid" => m.valid.push(id),
                    "test" => m.test.push(id),
                    other => {
                        return Err(Error::Parse {
                            offset,
                            reason: format!("unknown split {other:?}"),
                        })
                    }
                }
            }
            offset += line.len();
        }
        let n = seen.len().max(1) as f64;
        m.ratios = SplitRatios {
            train: m.train.len() as f64 / n,
            valid: m.valid.len() as f64 / n,
            test: m.test.len() as f64 / n,
        };
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i:05}")).collect()
    }

    #[test]
    fn default_and_two_way_sizes() {
        let m = split(&ids(1000), SplitRatios::default(), 3).unwrap();
        assert_eq!((m.train.len(), m.valid.len(), m.test.len()), (800, 100, 100));
        let m = split(&ids(1000), SplitRatios::two_way(880, 120), 3).unwrap();
        assert_eq!((m.train.len(), m.valid.len(), m.test.len()), (880, 0, 120));
    }

    #[test]
    fn rejects_bad_ratios_and_duplicates() {
        let bad = SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.2,
        };
        assert!(split(&ids(10), bad, 0).is_err());
        let mut dup = ids(3);
        dup.push("id00000".into());
        assert!(split(&dup, SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = split(&ids(20), SplitRatios::default(), 1).unwrap();
        let back = SplitManifest::from_text(&m.to_text()).unwrap();
        assert_eq!((back.train, back.valid, back.test), (m.train, m.valid, m.test));
        assert!(SplitManifest::from_text("train a\nbogus b\n").is_err());
    }
}
