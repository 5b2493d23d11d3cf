//! Synthetic multi-domain datasets with a class-aligned nuisance feature.
//!
//! Coordinate 0 carries the class signal, coordinate 1 carries the domain's
//! nuisance offset, and every other coordinate is pure noise. Source domains
//! each hold a single class at their own offset, so the nuisance predicts the
//! class across the source pool. The target domain holds every class at one
//! shared offset, where the nuisance carries no class information.

mod csv_io;
mod sampler;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use csv_io::{read_dataset_csv, write_dataset_csv};
pub use sampler::{
    class_domain_weights, sample_batch, Batch, BatchSampler, ClassAwareSampler, BATCH_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

impl fmt::Display for DomainRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainRole::Source => "source",
            DomainRole::Target => "target",
        })
    }
}

impl FromStr for DomainRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" => Ok(DomainRole::Source),
            "target" => Ok(DomainRole::Target),
            other => Err(Error::Config(format!("unknown domain role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// One domain of the quantity chart.
///
/// `nuisance_offset` is expressed in units of the dataset's nuisance scale,
/// so setting the scale to zero removes the nuisance everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub nuisance_offset: f64,
    pub role: DomainRole,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_signal: f64,
    pub nuisance_scale: f64,
    pub noise_sigma: f64,
    pub domains: Vec<DomainSpec>,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    /// Two classes; a target domain with both classes at offset 0 and two
    /// single-class source domains at `+κ` and `-κ`.
    fn default() -> Self {
        Self {
            num_classes: 2,
            feature_dim: 8,
            class_signal: 0.5,
            nuisance_scale: 5.0,
            noise_sigma: 0.25,
            domains: vec![
                DomainSpec {
                    domain_id: 0,
                    nuisance_offset: 0.0,
                    role: DomainRole::Target,
                    class_counts: vec![43, 43],
                },
                DomainSpec {
                    domain_id: 1,
                    nuisance_offset: 1.0,
                    role: DomainRole::Source,
                    class_counts: vec![300, 0],
                },
                DomainSpec {
                    domain_id: 2,
                    nuisance_offset: -1.0,
                    role: DomainRole::Source,
                    class_counts: vec![0, 300],
                },
            ],
            split_fractions: [0.7, 0.15, 0.15],
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("dataset.num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 3 {
            return bad(format!("dataset.feature_dim must be >= 3, got {}", self.feature_dim));
        }
        for (name, v) in [
            ("dataset.class_signal", self.class_signal),
            ("dataset.nuisance_scale", self.nuisance_scale),
            ("dataset.noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let [tr, va, te] = self.split_fractions;
        if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "dataset.split fractions must lie in [0,1] and sum to 1, got ({tr}, {va}, {te})"
            ));
        }
        if tr <= 0.0 {
            return bad("dataset.split train fraction must be > 0".into());
        }
        if self.domains.is_empty() {
            return bad("dataset needs at least one domain".into());
        }
        let mut ids: Vec<usize> = self.domains.iter().map(|d| d.domain_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.domains.len() {
            return bad("dataset domain ids must be unique".into());
        }
        for d in &self.domains {
            if d.class_counts.len() != self.num_classes {
                return bad(format!(
                    "domain {} lists {} class counts, expected {}",
                    d.domain_id,
                    d.class_counts.len(),
                    self.num_classes
                ));
            }
            if !d.nuisance_offset.is_finite() {
                return bad(format!("domain {} has a non-finite offset", d.domain_id));
            }
            if d.role == DomainRole::Target && d.class_counts.contains(&0) {
                return bad(format!(
                    "target domain {} needs every class count > 0",
                    d.domain_id
                ));
            }
            for (class, &count) in d.class_counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let sizes = split_sizes(count, self.split_fractions);
                for (k, &size) in sizes.iter().enumerate() {
                    if size == 0 && self.split_fractions[k] > 0.0 {
                        return bad(format!(
                            "domain {} class {class}: {count} samples cannot fill a {} split",
                            d.domain_id,
                            [Split::Train, Split::Val, Split::Test][k]
                        ));
                    }
                }
            }
        }
        if !self.domains.iter().any(|d| d.role == DomainRole::Target) {
            return bad("dataset needs a target domain".into());
        }
        let sources: Vec<&DomainSpec> = self
            .domains
            .iter()
            .filter(|d| d.role == DomainRole::Source)
            .collect();
        if !sources.is_empty()
            && !sources
                .iter()
                .any(|d| d.class_counts.iter().filter(|&&c| c > 0).count() == 1)
        {
            return bad("at least one source domain must hold exactly one class".into());
        }
        Ok(())
    }

    /// Ratio of nuisance scale to class signal (infinite when the signal is 0).
    pub fn nuisance_ratio(&self) -> f64 {
        self.nuisance_scale / self.class_signal
    }

    /// Mean of coordinate 0 for `class`, spread evenly over `[-μ, μ]`.
    pub fn class_mean(&self, class: usize) -> f64 {
        let t = class as f64 / (self.num_classes - 1) as f64;
        self.class_signal * (2.0 * t - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub class_label: usize,
    pub domain_label: usize,
    pub domain_role: DomainRole,
    pub split: Split,
}

/// `(train, val, test)` sizes for a cell of `count` samples.
pub fn split_sizes(count: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = ((count as f64) * fractions[0]).round() as usize;
    let train = train.min(count);
    let val = (((count as f64) * fractions[1]).round() as usize).min(count - train);
    let test = count - train - val;
    if fractions[2] == 0.0 {
        // rounding residue goes to train when there is no test split
        return [train + test, val, 0];
    }
    [train, val, test]
}

/// Draws the full dataset, stratified into splits per (domain, class) cell.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let mut out = Vec::new();
    for d in &cfg.domains {
        let offset = d.nuisance_offset * cfg.nuisance_scale;
        for (class, &count) in d.class_counts.iter().enumerate() {
            let mean = cfg.class_mean(class);
            let mut cell: Vec<Sample> = (0..count)
                .map(|_| {
                    let x = (0..cfg.feature_dim)
                        .map(|j| {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            let base = match j {
                                0 => mean,
                                1 => offset,
                                _ => 0.0,
                            };
                            base + cfg.noise_sigma * noise
                        })
                        .collect();
                    Sample {
                        x,
                        class_label: class,
                        domain_label: d.domain_id,
                        domain_role: d.role,
                        split: Split::Train,
                    }
                })
                .collect();
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng);
            let [n_train, n_val, _] = split_sizes(count, cfg.split_fractions);
            for (rank, &i) in order.iter().enumerate() {
                cell[i].split = if rank < n_train {
                    Split::Train
                } else if rank < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            out.extend(cell);
        }
    }
    Ok(out)
}

pub fn filter_split(samples: &[Sample], split: Split) -> Vec<Sample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}
