//! Accuracy, Cohen's kappa, AUROC and mean/std aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub accuracy: f64,
    pub kappa: f64,
    /// Absent when the evaluated set holds a single class.
    pub auroc: Option<f64>,
    pub n_samples: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Contract(format!(
            "metric inputs need equal non-zero lengths, got {a} and {b}"
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `(p_o - p_e) / (1 - p_e)`; 0 when chance agreement is already 1.
pub fn cohen_kappa(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let n = pred.len() as f64;
    let k = pred.iter().chain(truth).copied().max().unwrap_or(0) + 1;
    let mut pm = vec![0usize; k];
    let mut tm = vec![0usize; k];
    for (&p, &t) in pred.iter().zip(truth) {
        pm[p] += 1;
        tm[t] += 1;
    }
    let p_o = accuracy(pred, truth)?;
    let p_e: f64 = pm
        .iter()
        .zip(&tm)
        .map(|(&a, &b)| (a as f64 / n) * (b as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Probability that a random positive (label 1) outscores a random negative,
/// ties counting one half. Computed from mid-ranks in `O(N log N)`.
pub fn auroc(scores: &[f64], truth: &[usize]) -> Result<f64> {
    check_lengths(scores.len(), truth.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("AUROC scores contain NaN".into()));
    }
    let pos = truth.iter().filter(|&&t| t == 1).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes in the ground truth".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| truth[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Scores from predicted labels and class-1 probabilities.
pub fn score(pred: &[usize], truth: &[usize], class1_scores: &[f64]) -> Result<MetricScores> {
    let auc = match auroc(class1_scores, truth) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricScores {
        accuracy: accuracy(pred, truth)?,
        kappa: cohen_kappa(pred, truth)?,
        auroc: auc,
        n_samples: pred.len(),
    })
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    /// Percent with one decimal, e.g. `89.0 [3.9]`.
    pub fn format(&self) -> String {
        format_mean_std(self.mean, self.std)
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1} [{:.1}]", mean * 100.0, std * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub accuracy: Summary,
    pub kappa: Summary,
    /// Over the rows where AUROC is defined.
    pub auroc: Option<Summary>,
}

pub fn aggregate(rows: &[MetricScores]) -> Result<AggregateScores> {
    if rows.is_empty() {
        return Err(Error::Contract("aggregate needs at least one row".into()));
    }
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let kap: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
    let auc: Vec<f64> = rows.iter().filter_map(|r| r.auroc).collect();
    Ok(AggregateScores {
        accuracy: Summary::of(&acc).expect("non-empty"),
        kappa: Summary::of(&kap).expect("non-empty"),
        auroc: Summary::of(&auc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(cohen_kappa(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);
        // p_o = 0.8, p_e = 0.4*0.4 + 0.6*0.6 = 0.52
        let pred = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let truth = [0, 0, 0, 1, 1, 1, 1, 1, 0, 1];
        let k = cohen_kappa(&pred, &truth).unwrap();
        assert!((k - 0.28 / 0.48).abs() < 1e-12);
        // p_o = 0.7, p_e = 0.4*0.3 + 0.6*0.7 = 0.54
        let pred = [0, 0, 1, 1, 1, 1, 1, 1, 0, 0];
        let truth = [0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        let k = cohen_kappa(&pred, &truth).unwrap();
        assert!((k - 0.16 / 0.46).abs() < 1e-12);
        assert!((k - 0.347_826).abs() < 1e-6);
        assert_eq!(cohen_kappa(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        // identical constant marginals: chance agreement is 1
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn kappa_zero_for_independent_predictions() {
        // predictions balanced within each true class
        let truth = [0, 0, 0, 0, 1, 1, 1, 1];
        let pred = [0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(cohen_kappa(&pred, &truth).unwrap(), 0.0);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(
            auroc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
        let s = score(&[1, 1], &[1, 1], &[0.7, 0.8]).unwrap();
        assert_eq!(s.auroc, None);
    }

    #[test]
    fn summary_and_format() {
        let s = Summary::of(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-12);
        assert!((s.std - 0.070_710_678).abs() < 1e-8);
        assert_eq!(Summary::of(&[0.4]).unwrap().std, 0.0);
        assert_eq!(format_mean_std(0.89, 0.039), "89.0 [3.9]");
    }

    fn brute_auroc(scores: &[f64], truth: &[usize]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &ti) in truth.iter().enumerate() {
            for (j, &tj) in truth.iter().enumerate() {
                if ti == 1 && tj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(prop_oneof![0.0..1.0f64, Just(0.5)], n),
                proptest::collection::vec(0usize..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise((scores, mut truth) in labelled()) {
            truth[0] = 0;
            truth[1] = 1;
            let fast = auroc(&scores, &truth).unwrap();
            prop_assert!((fast - brute_auroc(&scores, &truth)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn auroc_invariant_under_monotone_maps((scores, mut truth) in labelled()) {
            truth[0] = 0;
            truth[1] = 1;
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
            prop_assert_eq!(auroc(&scores, &truth).unwrap(), auroc(&mapped, &truth).unwrap());
        }

        #[test]
        fn metric_ranges(pairs in proptest::collection::vec((0usize..2, 0usize..2), 1..80)) {
            let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = accuracy(&pred, &truth).unwrap();
            let k = cohen_kappa(&pred, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k));
            let both = truth.contains(&0) && truth.contains(&1);
            if both {
                prop_assert_eq!(a == 1.0, (k - 1.0).abs() < 1e-12);
            }
            let err = 1.0 - a;
            prop_assert!((a + err - 1.0).abs() < 1e-12);
        }
    }
}
