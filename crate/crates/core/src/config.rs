//! Experiment configuration in a plain `section.key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! loss.lambda_cen = 100
//! dataset.domain.0 = target, 0, 43, 43
//! experiment.variants = Vanilla, L2I
//! ```
//!
//! Omitted keys keep their defaults. Any `dataset.domain.<id>` line replaces
//! the default domain list. Dataset and model seeds are not keys: each run
//! derives them from `experiment.master_seed`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetConfig, DomainRole, DomainSpec};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::optim::OptimizerConfig;
use crate::trainer::{EarlyStopConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub early_stop: EarlyStopConfig,
    pub variants: Vec<Variant>,
    pub n_runs: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            early_stop: EarlyStopConfig::default(),
            variants: Variant::ALL.to_vec(),
            n_runs: 10,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.dataset.feature_dim {
            return Err(Error::Config(format!(
                "model input width {} must equal dataset.feature_dim {}",
                self.model.input_dim, self.dataset.feature_dim
            )));
        }
        if self.model.num_classes != self.dataset.num_classes {
            return Err(Error::Config(format!(
                "model classes {} must equal dataset.num_classes {}",
                self.model.num_classes, self.dataset.num_classes
            )));
        }
        let margins = self.variants.iter().any(|v| v.uses_margins());
        self.loss.validate(margins)?;
        self.optimizer.validate()?;
        self.early_stop.validate()?;
        if self.variants.is_empty() {
            return Err(Error::Config("experiment.variants must not be empty".into()));
        }
        let unique: BTreeSet<Variant> = self.variants.iter().copied().collect();
        if unique.len() != self.variants.len() {
            return Err(Error::Config("experiment.variants lists a variant twice".into()));
        }
        if self.n_runs < 1 {
            return Err(Error::Config("experiment.n_runs must be >= 1".into()));
        }
        Ok(())
    }

    /// Text form accepted by [`parse_config_str`]; parsing it yields `self`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "dataset.num_classes = {}", d.num_classes);
        let _ = writeln!(s, "dataset.feature_dim = {}", d.feature_dim);
        let _ = writeln!(s, "dataset.class_signal = {}", d.class_signal);
        let _ = writeln!(s, "dataset.nuisance_scale = {}", d.nuisance_scale);
        let _ = writeln!(s, "dataset.noise_sigma = {}", d.noise_sigma);
        let _ = writeln!(s, "dataset.split_fractions = {}", list(&d.split_fractions));
        for dom in &d.domains {
            let counts: Vec<String> = dom.class_counts.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "dataset.domain.{} = {}, {}, {}",
                dom.domain_id,
                dom.role,
                dom.nuisance_offset,
                counts.join(", ")
            );
        }
        let hidden: Vec<String> = self.model.encoder_hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "model.encoder_hidden = {}", hidden.join(", "));
        let _ = writeln!(s, "model.latent_dim = {}", self.model.latent_dim);
        let l = &self.loss;
        let _ = writeln!(s, "loss.lambda_cen = {}", l.lambda_cen);
        let _ = writeln!(s, "loss.lambda_latent = {}", l.lambda_latent);
        let _ = writeln!(s, "loss.r = {}", l.r);
        let _ = writeln!(s, "loss.d = {}", l.d);
        let o = &self.optimizer;
        let _ = writeln!(s, "optimizer.beta1 = {}", o.beta1);
        let _ = writeln!(s, "optimizer.beta2 = {}", o.beta2);
        let _ = writeln!(s, "optimizer.weight_decay = {}", o.weight_decay);
        let _ = writeln!(s, "optimizer.lr_centers = {}", o.lr_centers);
        let _ = writeln!(s, "optimizer.lr_encoder_classifier = {}", o.lr_encoder_classifier);
        let _ = writeln!(s, "optimizer.eps = {}", o.eps);
        let e = &self.early_stop;
        let _ = writeln!(s, "early_stop.patience = {}", e.patience);
        let _ = writeln!(s, "early_stop.max_steps = {}", e.max_steps);
        let _ = writeln!(s, "early_stop.eval_interval = {}", e.eval_interval);
        let names: Vec<&str> = self.variants.iter().map(|v| v.name()).collect();
        let _ = writeln!(s, "experiment.variants = {}", names.join(", "));
        let _ = writeln!(s, "experiment.n_runs = {}", self.n_runs);
        let _ = writeln!(s, "experiment.master_seed = {}", self.master_seed);
        let _ = writeln!(s, "experiment.output_dir = {}", self.output_dir.display());
        s
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{}'", value.trim())))
}

/// Comma-separated values; an empty value is an empty list.
fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| parse_value(key, item))
        .collect()
}

fn parse_domain(key: &str, id: &str, value: &str) -> Result<DomainSpec> {
    let domain_id = parse_value(key, id)?;
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() < 3 {
        return Err(Error::Config(format!(
            "{key}: expected 'role, offset, count, ...', got '{}'",
            value.trim()
        )));
    }
    let role = DomainRole::from_str(parts[0])
        .map_err(|_| Error::Config(format!("{key}: unknown role '{}'", parts[0])))?;
    let nuisance_offset = parse_value(key, parts[1])?;
    let class_counts = parts[2..]
        .iter()
        .map(|p| parse_value(key, p))
        .collect::<Result<Vec<usize>>>()?;
    Ok(DomainSpec {
        domain_id,
        nuisance_offset,
        role,
        class_counts,
    })
}

/// Parses and validates a configuration from text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut domains: Vec<DomainSpec> = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'section.key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Config(format!("{key}: set more than once")));
        }
        if let Some(id) = key.strip_prefix("dataset.domain.") {
            domains.push(parse_domain(key, id, value)?);
            continue;
        }
        let d = &mut cfg.dataset;
        match key {
            "dataset.num_classes" => d.num_classes = parse_value(key, value)?,
            "dataset.feature_dim" => d.feature_dim = parse_value(key, value)?,
            "dataset.class_signal" => d.class_signal = parse_value(key, value)?,
            "dataset.nuisance_scale" => d.nuisance_scale = parse_value(key, value)?,
            "dataset.noise_sigma" => d.noise_sigma = parse_value(key, value)?,
            "dataset.split_fractions" => {
                let f: Vec<f64> = parse_list(key, value)?;
                d.split_fractions = f.try_into().map_err(|_| {
                    Error::Config(format!("{key}: expected three fractions"))
                })?;
            }
            "model.encoder_hidden" => cfg.model.encoder_hidden = parse_list(key, value)?,
            "model.latent_dim" => cfg.model.latent_dim = parse_value(key, value)?,
            "loss.lambda_cen" => cfg.loss.lambda_cen = parse_value(key, value)?,
            "loss.lambda_latent" => cfg.loss.lambda_latent = parse_value(key, value)?,
            "loss.r" => cfg.loss.r = parse_value(key, value)?,
            "loss.d" => cfg.loss.d = parse_value(key, value)?,
            "optimizer.beta1" => cfg.optimizer.beta1 = parse_value(key, value)?,
            "optimizer.beta2" => cfg.optimizer.beta2 = parse_value(key, value)?,
            "optimizer.weight_decay" => cfg.optimizer.weight_decay = parse_value(key, value)?,
            "optimizer.lr_centers" => cfg.optimizer.lr_centers = parse_value(key, value)?,
            "optimizer.lr_encoder_classifier" => {
                cfg.optimizer.lr_encoder_classifier = parse_value(key, value)?
            }
            "optimizer.eps" => cfg.optimizer.eps = parse_value(key, value)?,
            "early_stop.patience" => cfg.early_stop.patience = parse_value(key, value)?,
            "early_stop.max_steps" => cfg.early_stop.max_steps = parse_value(key, value)?,
            "early_stop.eval_interval" => cfg.early_stop.eval_interval = parse_value(key, value)?,
            "experiment.variants" => cfg.variants = parse_list(key, value)?,
            "experiment.n_runs" => cfg.n_runs = parse_value(key, value)?,
            "experiment.master_seed" => cfg.master_seed = parse_value(key, value)?,
            "experiment.output_dir" => cfg.output_dir = PathBuf::from(value.trim()),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }
    if !domains.is_empty() {
        cfg.dataset.domains = domains;
    }
    cfg.model.input_dim = cfg.dataset.feature_dim;
    cfg.model.num_classes = cfg.dataset.num_classes;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(detail) => Error::Parse {
            path: path.to_path_buf(),
            detail,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config_str("# nothing\n\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.loss.lambda_cen, 100.0);
        assert_eq!(cfg.loss.lambda_latent, 1.0);
        assert_eq!((cfg.loss.r, cfg.loss.d), (0.1, 1.9));
        assert_eq!(cfg.early_stop.patience, 20);
        assert_eq!(cfg.optimizer.lr_centers, 1e-4);
        assert_eq!(cfg.optimizer.lr_encoder_classifier, 5e-5);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config_str("loss.lambda = 3").unwrap_err().to_string();
        assert!(err.contains("loss.lambda"), "{err}");
    }

    #[test]
    fn diameter_bound() {
        let err = parse_config_str("loss.d = 2.5").unwrap_err().to_string();
        assert!(err.contains("loss.d") && err.contains("d <= 2"), "{err}");
    }

    #[test]
    fn margin_bound_depends_on_variants() {
        let err = parse_config_str("loss.r = 1.0").unwrap_err().to_string();
        assert!(err.contains("2*loss.r"), "{err}");
        let ok = parse_config_str("loss.r = 1.0\nexperiment.variants = NoMargin, Vanilla").unwrap();
        assert_eq!(ok.loss.r, 1.0);
    }

    #[test]
    fn domains_replace_defaults() {
        let cfg = parse_config_str(
            "dataset.domain.0 = target, 0, 20, 20\ndataset.domain.5 = source, 2.5, 100, 0",
        )
        .unwrap();
        assert_eq!(cfg.dataset.domains.len(), 2);
        assert_eq!(cfg.dataset.domains[1].domain_id, 5);
        assert_eq!(cfg.dataset.domains[1].nuisance_offset, 2.5);
    }

    #[test]
    fn emit_round_trips_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(parse_config_str(&cfg.emit()).unwrap(), cfg);
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_config_str("loss.r = 0.1\nloss.r = 0.2").is_err());
    }
}
