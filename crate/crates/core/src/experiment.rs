//! Repeated seeded runs of one variant with per-run rows and aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, DatasetConfig, Sample, Split};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, AggregateScores, MetricScores};
use crate::model::{Model, ModelConfig};
use crate::rng::{derive_seed, STREAM_DATA, STREAM_MODEL, STREAM_SAMPLER};
use crate::trainer::{evaluate, train, DomainFilter, TrainConfig, TrainingLog, Variant};

/// Seeds of one run. They depend on the run index only, so every variant
/// sees the same data split and initialization for a given run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub data: u64,
    pub model: u64,
    pub sampler: u64,
}

impl RunSeeds {
    pub fn derive(master_seed: u64, run: usize) -> Self {
        let run = run as u64;
        Self {
            data: derive_seed(master_seed, STREAM_DATA, run),
            model: derive_seed(master_seed, STREAM_MODEL, run),
            sampler: derive_seed(master_seed, STREAM_SAMPLER, run),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub run: usize,
    pub seeds: RunSeeds,
    pub target: MetricScores,
    /// Absent when the test split holds no source samples.
    pub source: Option<MetricScores>,
    pub log: TrainingLog,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub variant: Variant,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub target: Option<AggregateScores>,
    pub source: Option<AggregateScores>,
}

pub fn run_dataset_config(cfg: &ExperimentConfig, seeds: &RunSeeds) -> DatasetConfig {
    DatasetConfig {
        seed: seeds.data,
        ..cfg.dataset.clone()
    }
}

pub fn run_model_config(cfg: &ExperimentConfig, seeds: &RunSeeds) -> ModelConfig {
    ModelConfig {
        input_dim: cfg.dataset.feature_dim,
        num_classes: cfg.dataset.num_classes,
        seed: seeds.model,
        ..cfg.model.clone()
    }
}

/// Trains and tests `variant` on the dataset of run `run`.
pub fn run_single(cfg: &ExperimentConfig, variant: Variant, run: usize) -> Result<RunResult> {
    let seeds = RunSeeds::derive(cfg.master_seed, run);
    let samples = generate_dataset(&run_dataset_config(cfg, &seeds))?;
    run_on_samples(cfg, variant, run, &samples)
}

pub fn run_on_samples(
    cfg: &ExperimentConfig,
    variant: Variant,
    run: usize,
    samples: &[Sample],
) -> Result<RunResult> {
    let seeds = RunSeeds::derive(cfg.master_seed, run);
    let model = Model::new(run_model_config(cfg, &seeds))?;
    let tc = TrainConfig {
        variant,
        loss: cfg.loss,
        optimizer: cfg.optimizer,
        early_stop: cfg.early_stop,
        sampler_seed: seeds.sampler,
    };
    let (model, log) = train(model, samples, &tc)?;
    let test: Vec<Sample> = samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .cloned()
        .collect();
    let target = evaluate(&model, &test, DomainFilter::Target)?;
    let source = match evaluate(&model, &test, DomainFilter::Source) {
        Ok(s) => Some(s),
        Err(Error::Evaluation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunResult {
        variant,
        run,
        seeds,
        target,
        source,
        log,
        model,
    })
}

/// Runs `n_runs` independent seeded runs in parallel. Failed runs are kept
/// as [`RunFailure`] rows and the aggregates cover the completed runs.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    variant: Variant,
    n_runs: usize,
) -> Result<ExperimentResult> {
    if n_runs < 1 {
        return Err(Error::Config("experiment.n_runs must be >= 1".into()));
    }
    let outcomes: Vec<Result<RunResult>> = (0..n_runs)
        .into_par_iter()
        .map(|run| run_single(cfg, variant, run))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("{variant} run {run} failed: {e}");
                failures.push(RunFailure {
                    run,
                    error: e.to_string(),
                });
            }
        }
    }
    if !failures.is_empty() && !runs.is_empty() {
        log::warn!(
            "{variant}: aggregating over {} of {n_runs} runs",
            runs.len()
        );
    }
    let target_rows: Vec<MetricScores> = runs.iter().map(|r| r.target).collect();
    let source_rows: Vec<MetricScores> = runs.iter().filter_map(|r| r.source).collect();
    Ok(ExperimentResult {
        variant,
        target: aggregate(&target_rows).ok(),
        source: aggregate(&source_rows).ok(),
        runs,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_run_and_stream() {
        let a = RunSeeds::derive(7, 0);
        let b = RunSeeds::derive(7, 1);
        assert_ne!(a, b);
        assert_ne!(a.data, a.model);
        assert_eq!(a, RunSeeds::derive(7, 0));
    }
}
