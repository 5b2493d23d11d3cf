#![allow(dead_code)]

use l2i_core::data::{generate_dataset, DatasetConfig, DomainRole, Sample, Split};

/// Binary logistic regression on raw features, fit by full-batch gradient
/// descent with a small ridge penalty.
pub struct Logistic {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Logistic {
    pub fn fit(samples: &[&Sample]) -> Self {
        let d = samples[0].x.len();
        let n = samples.len() as f64;
        let (mut w, mut b) = (vec![0.0; d], 0.0);
        let (lr, ridge) = (0.1, 1e-3);
        for _ in 0..3000 {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for s in samples {
                let z: f64 = s.x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
                let err = 1.0 / (1.0 + (-z).exp()) - s.class_label as f64;
                for (g, x) in gw.iter_mut().zip(&s.x) {
                    *g += err * x;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * (g / n + ridge * *wi);
            }
            b -= lr * gb / n;
        }
        Self { w, b }
    }

    pub fn accuracy(&self, samples: &[&Sample]) -> f64 {
        let hits = samples
            .iter()
            .filter(|s| {
                let z: f64 = s.x.iter().zip(&self.w).map(|(x, w)| x * w).sum::<f64>() + self.b;
                usize::from(z > 0.0) == s.class_label
            })
            .count();
        hits as f64 / samples.len() as f64
    }
}

/// Source-only oracle: fit on source training samples, return
/// `(source test accuracy, target test accuracy)`.
pub fn source_only_oracle(samples: &[Sample]) -> (f64, f64) {
    let pick = |role: DomainRole, split: Split| -> Vec<&Sample> {
        samples
            .iter()
            .filter(|s| s.domain_role == role && s.split == split)
            .collect()
    };
    let model = Logistic::fit(&pick(DomainRole::Source, Split::Train));
    (
        model.accuracy(&pick(DomainRole::Source, Split::Test)),
        model.accuracy(&pick(DomainRole::Target, Split::Test)),
    )
}

/// Source-only oracle scored on the target distribution rather than the
/// small target test split: the logistic model is fit on the source training
/// samples of `cfg`, then scored on a fresh draw of `per_class` target samples
/// per class. Returns `(source test accuracy, target accuracy)`.
pub fn source_only_oracle_population(cfg: &DatasetConfig, per_class: usize) -> (f64, f64) {
    let samples = generate_dataset(cfg).unwrap();
    let pick = |role: DomainRole, split: Split| -> Vec<&Sample> {
        samples
            .iter()
            .filter(|s| s.domain_role == role && s.split == split)
            .collect()
    };
    let model = Logistic::fit(&pick(DomainRole::Source, Split::Train));
    let mut big = cfg.clone();
    big.seed = cfg.seed ^ 0x5EED;
    for d in big.domains.iter_mut().filter(|d| d.role == DomainRole::Target) {
        d.class_counts.iter_mut().for_each(|c| *c = per_class);
    }
    let fresh = generate_dataset(&big).unwrap();
    let target: Vec<&Sample> = fresh
        .iter()
        .filter(|s| s.domain_role == DomainRole::Target)
        .collect();
    (
        model.accuracy(&pick(DomainRole::Source, Split::Test)),
        model.accuracy(&target),
    )
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
