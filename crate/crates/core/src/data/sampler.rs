use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

use super::{DomainRole, Sample};

/// Size of the random part of every training batch.
pub const BATCH_SIZE: usize = 10;

/// Indices into the training set.
///
/// `center_part[i]` is a target-domain sample of class `i`; it is empty for
/// samplers that do not feed the center point loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub random_part: Vec<usize>,
    pub center_part: Vec<usize>,
}

/// Draws batches of the two-part scheme: `BATCH_SIZE` samples uniformly
/// without replacement from the whole training set, plus one uniformly drawn
/// target-domain sample per class. The two parts are drawn independently and
/// may overlap.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    target_by_class: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(train: &[Sample], num_classes: usize) -> Result<Self> {
        if train.len() < BATCH_SIZE {
            return Err(Error::Sampler(format!(
                "training set has {} samples, a batch needs {BATCH_SIZE}",
                train.len()
            )));
        }
        let mut target_by_class = vec![Vec::new(); num_classes];
        for (i, s) in train.iter().enumerate() {
            if s.domain_role == DomainRole::Target {
                let slot = target_by_class.get_mut(s.class_label).ok_or(Error::Index {
                    index: s.class_label,
                    len: num_classes,
                })?;
                slot.push(i);
            }
        }
        if let Some(c) = target_by_class.iter().position(Vec::is_empty) {
            return Err(Error::Sampler(format!(
                "no target-domain training sample of class {c}"
            )));
        }
        Ok(Self {
            len: train.len(),
            target_by_class,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Batch {
        let random_part = index::sample(rng, self.len, BATCH_SIZE).into_vec();
        let center_part = self
            .target_by_class
            .iter()
            .map(|members| members[rng.random_range(0..members.len())])
            .collect();
        Batch {
            random_part,
            center_part,
        }
    }
}

/// One-shot form of [`BatchSampler::sample`].
pub fn sample_batch<R: Rng + ?Sized>(
    train: &[Sample],
    num_classes: usize,
    rng: &mut R,
) -> Result<Batch> {
    Ok(BatchSampler::new(train, num_classes)?.sample(rng))
}

/// Class-aware batches: slots are dealt round-robin over the
/// (domain role, class) cells so every cell appears in every batch. The
/// cursor carries over between batches.
#[derive(Debug, Clone)]
pub struct ClassAwareSampler {
    cells: Vec<Vec<usize>>,
    cursor: usize,
}

impl ClassAwareSampler {
    pub fn new(train: &[Sample], num_classes: usize) -> Result<Self> {
        let mut by_role: BTreeMap<DomainRole, Vec<Vec<usize>>> = BTreeMap::new();
        for (i, s) in train.iter().enumerate() {
            if s.class_label >= num_classes {
                return Err(Error::Index {
                    index: s.class_label,
                    len: num_classes,
                });
            }
            by_role
                .entry(s.domain_role)
                .or_insert_with(|| vec![Vec::new(); num_classes])[s.class_label]
                .push(i);
        }
        if by_role.is_empty() {
            return Err(Error::Config("class-aware sampling needs training data".into()));
        }
        let mut cells = Vec::new();
        for (role, classes) in by_role {
            for (class, members) in classes.into_iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::Config(format!(
                        "class-aware sampling: no {role} training sample of class {class}"
                    )));
                }
                cells.push(members);
            }
        }
        Ok(Self { cells, cursor: 0 })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Batch {
        let random_part = (0..BATCH_SIZE)
            .map(|_| {
                let cell = &self.cells[self.cursor];
                self.cursor = (self.cursor + 1) % self.cells.len();
                cell[rng.random_range(0..cell.len())]
            })
            .collect();
        Batch {
            random_part,
            center_part: Vec::new(),
        }
    }
}

/// Per-sample weights `N / (cells * N_cell)` over (domain role, class) cells.
/// The weights average to one over the set.
pub fn class_domain_weights(train: &[Sample]) -> Vec<f64> {
    let mut counts: BTreeMap<(DomainRole, usize), usize> = BTreeMap::new();
    for s in train {
        *counts.entry((s.domain_role, s.class_label)).or_default() += 1;
    }
    let total = train.len() as f64;
    let cells = counts.len() as f64;
    train
        .iter()
        .map(|s| total / (cells * counts[&(s.domain_role, s.class_label)] as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::rng;

    fn sample(class: usize, role: DomainRole) -> Sample {
        Sample {
            x: vec![0.0; 3],
            class_label: class,
            domain_label: usize::from(role == DomainRole::Source),
            domain_role: role,
            split: Split::Train,
        }
    }

    fn toy_set() -> Vec<Sample> {
        let mut v = Vec::new();
        for _ in 0..3 {
            v.push(sample(0, DomainRole::Target));
            v.push(sample(1, DomainRole::Target));
        }
        for _ in 0..20 {
            v.push(sample(0, DomainRole::Source));
        }
        for _ in 0..10 {
            v.push(sample(1, DomainRole::Source));
        }
        v
    }

    #[test]
    fn batch_shape() {
        let train = toy_set();
        let mut r = rng::seeded(3);
        let b = sample_batch(&train, 2, &mut r).unwrap();
        assert_eq!(b.random_part.len(), BATCH_SIZE);
        let mut dedup = b.random_part.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), BATCH_SIZE);
        assert_eq!(b.center_part.len(), 2);
        for (c, &i) in b.center_part.iter().enumerate() {
            assert_eq!(train[i].class_label, c);
            assert_eq!(train[i].domain_role, DomainRole::Target);
        }
    }

    #[test]
    fn too_small_training_set_rejected() {
        let train: Vec<_> = toy_set().into_iter().take(9).collect();
        let mut r = rng::seeded(0);
        assert!(matches!(
            sample_batch(&train, 2, &mut r),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn missing_target_class_rejected() {
        let train: Vec<_> = toy_set()
            .into_iter()
            .filter(|s| !(s.domain_role == DomainRole::Target && s.class_label == 1))
            .collect();
        assert!(matches!(
            BatchSampler::new(&train, 2),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn class_aware_covers_every_cell() {
        let train = toy_set();
        let mut s = ClassAwareSampler::new(&train, 2).unwrap();
        assert_eq!(s.num_cells(), 4);
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let b = s.sample(&mut r);
            assert_eq!(b.random_part.len(), BATCH_SIZE);
            let mut counts = BTreeMap::new();
            for &i in &b.random_part {
                *counts
                    .entry((train[i].domain_role, train[i].class_label))
                    .or_insert(0) += 1;
            }
            assert_eq!(counts.len(), 4);
            assert!(counts.values().all(|&c| c >= 2), "{counts:?}");
        }
    }

    #[test]
    fn class_aware_single_domain_is_class_balanced() {
        let train: Vec<_> = toy_set()
            .into_iter()
            .filter(|s| s.domain_role == DomainRole::Target)
            .collect();
        let mut s = ClassAwareSampler::new(&train, 2).unwrap();
        assert_eq!(s.num_cells(), 2);
        let b = s.sample(&mut rng::seeded(1));
        let ones = b.random_part.iter().filter(|&&i| train[i].class_label == 1).count();
        assert_eq!(ones, BATCH_SIZE / 2);
    }

    #[test]
    fn class_aware_is_deterministic() {
        let train = toy_set();
        let draw = || {
            let mut s = ClassAwareSampler::new(&train, 2).unwrap();
            let mut r = rng::seeded(9);
            (0..5).map(|_| s.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn class_aware_empty_cell_rejected() {
        let train: Vec<_> = toy_set()
            .into_iter()
            .filter(|s| !(s.domain_role == DomainRole::Source && s.class_label == 1))
            .collect();
        assert!(matches!(
            ClassAwareSampler::new(&train, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weights() {
        let balanced: Vec<_> = (0..4)
            .map(|i| sample(i % 2, if i < 2 { DomainRole::Target } else { DomainRole::Source }))
            .collect();
        assert!(class_domain_weights(&balanced).iter().all(|&w| w == 1.0));

        let train = toy_set();
        let w = class_domain_weights(&train);
        // target cells hold 3 samples against an average of 9
        assert!((w[0] - 3.0).abs() < 1e-12);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn half_populated_cell_gets_weight_two() {
        let mut v = Vec::new();
        for _ in 0..2 {
            v.push(sample(0, DomainRole::Target));
        }
        for _ in 0..6 {
            v.push(sample(1, DomainRole::Target));
        }
        // average cell size 4, class-0 cell holds 2
        let w = class_domain_weights(&v);
        assert_eq!(w[0], 2.0);
    }
}
