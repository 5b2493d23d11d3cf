//! Learn-to-Ignore supervised domain adaptation on a from-scratch
//! reverse-mode autodiff engine.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod projection;
pub mod report;
pub mod rng;
pub mod trainer;

pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use data::{generate_dataset, DatasetConfig, DomainRole, DomainSpec, Sample, Split};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentResult, RunResult};
pub use losses::{LossBreakdown, LossConfig};
pub use metrics::MetricScores;
pub use model::{Model, ModelConfig};
pub use optim::OptimizerConfig;
pub use report::run_suite;
pub use trainer::{evaluate, train, DomainFilter, EarlyStopConfig, TrainConfig, Variant};
