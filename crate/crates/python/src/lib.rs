//! Python bindings for `l2i-core`.
//!
//! Inputs and outputs are plain lists of floats; tensors never cross the
//! boundary. Long-running calls release the GIL.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use l2i_core::experiment::{run_dataset_config, run_model_config, RunSeeds};
use l2i_core::losses::{center_point_loss, classification_loss, latent_loss};
use l2i_core::metrics::{self, MetricScores};
use l2i_core::numerics::{Graph, Tensor};
use l2i_core::{
    DomainFilter, Error, ExperimentConfig, LossConfig, Model, ModelConfig, Sample, TrainConfig,
    Variant,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::Shape { .. }
        | Error::Domain { .. }
        | Error::Index { .. }
        | Error::Contract(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::UnsupportedVariant(_)
        | Error::Sampler(_)
        | Error::UndefinedMetric(_)
        | Error::Evaluation(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(to_py)
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn scores_dict<'py>(py: Python<'py>, s: &MetricScores) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", s.accuracy)?;
    d.set_item("kappa", s.kappa)?;
    d.set_item("auroc", s.auroc)?;
    d.set_item("n_samples", s.n_samples)?;
    Ok(d)
}

/// One generated example.
#[pyclass(name = "Sample", module = "l2i", frozen, from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: Sample,
}

#[pymethods]
impl PySample {
    #[new]
    #[pyo3(signature = (x, class_label, domain_label, domain_role, split="train"))]
    fn new(x: Vec<f64>, class_label: usize, domain_label: usize, domain_role: &str, split: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Sample {
                x,
                class_label,
                domain_label,
                domain_role: domain_role.parse().map_err(to_py)?,
                split: split.parse().map_err(to_py)?,
            },
        })
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x.clone()
    }

    #[getter]
    fn class_label(&self) -> usize {
        self.inner.class_label
    }

    #[getter]
    fn domain_label(&self) -> usize {
        self.inner.domain_label
    }

    #[getter]
    fn domain_role(&self) -> String {
        self.inner.domain_role.to_string()
    }

    #[getter]
    fn split(&self) -> String {
        self.inner.split.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(class_label={}, domain_label={}, domain_role='{}', split='{}')",
            self.inner.class_label, self.inner.domain_label, self.inner.domain_role, self.inner.split
        )
    }
}

fn unwrap_samples(samples: &[PySample]) -> Vec<Sample> {
    samples.iter().map(|s| s.inner.clone()).collect()
}

/// Experiment configuration. Defaults match `default.cfg`.
#[pyclass(name = "Config", module = "l2i", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: l2i_core::parse_config(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_str(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: l2i_core::parse_config_str(text).map_err(to_py)?,
        })
    }

    /// The configuration in file syntax.
    fn emit(&self) -> String {
        self.inner.emit()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn n_runs(&self) -> usize {
        self.inner.n_runs
    }

    #[setter]
    fn set_n_runs(&mut self, v: usize) {
        self.inner.n_runs = v;
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, v: u64) {
        self.inner.master_seed = v;
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.early_stop.max_steps
    }

    #[setter]
    fn set_max_steps(&mut self, v: usize) {
        self.inner.early_stop.max_steps = v;
    }

    #[getter]
    fn variants(&self) -> Vec<String> {
        self.inner.variants.iter().map(|v| v.name().to_string()).collect()
    }

    #[setter]
    fn set_variants(&mut self, names: Vec<String>) -> PyResult<()> {
        self.inner.variants = names
            .iter()
            .map(|n| n.parse::<Variant>())
            .collect::<l2i_core::Result<_>>()
            .map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, v: PathBuf) {
        self.inner.output_dir = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(variants={:?}, n_runs={}, master_seed={}, max_steps={})",
            self.variants(),
            self.inner.n_runs,
            self.inner.master_seed,
            self.inner.early_stop.max_steps
        )
    }
}

fn config_or_default(config: Option<&PyConfig>) -> ExperimentConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Encoder, classifier head and class center points.
#[pyclass(name = "Model", module = "l2i", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes=2, encoder_hidden=vec![64, 64], latent_dim=16, seed=0))]
    fn new(input_dim: usize, num_classes: usize, encoder_hidden: Vec<usize>, latent_dim: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig {
            input_dim,
            encoder_hidden,
            latent_dim,
            num_classes,
            seed,
        };
        Ok(Self {
            inner: Model::new(cfg).map_err(to_py)?,
        })
    }

    /// The model a run of `config` starts from.
    #[staticmethod]
    #[pyo3(signature = (config=None, run=0))]
    fn for_run(config: Option<&PyConfig>, run: usize) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let seeds = RunSeeds::derive(cfg.master_seed, run);
        Ok(Self {
            inner: Model::new(run_model_config(&cfg, &seeds)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    /// Unit-norm latent vectors, one per input row.
    fn encode(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (f, _) = self.inner.forward_batch(&refs).map_err(to_py)?;
        Ok(rows_of(&f))
    }

    /// Softmax class scores, one row per input.
    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (_, p) = self.inner.forward_batch(&refs).map_err(to_py)?;
        Ok(rows_of(&p))
    }

    #[getter]
    fn centers(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.params.centers)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_parameters()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.config.latent_dim
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(input_dim={}, encoder_hidden={:?}, latent_dim={}, num_classes={})",
            c.input_dim, c.encoder_hidden, c.latent_dim, c.num_classes
        )
    }
}

/// Samples of run `run` under `config` (defaults when omitted).
#[pyfunction]
#[pyo3(signature = (config=None, run=0))]
fn generate_dataset(config: Option<&PyConfig>, run: usize) -> PyResult<Vec<PySample>> {
    let cfg = config_or_default(config);
    let seeds = RunSeeds::derive(cfg.master_seed, run);
    let samples = l2i_core::generate_dataset(&run_dataset_config(&cfg, &seeds)).map_err(to_py)?;
    Ok(samples.into_iter().map(|inner| PySample { inner }).collect())
}

/// Trains `model` with early stopping; returns the restored best model and a
/// log summary.
#[pyfunction]
#[pyo3(signature = (model, samples, variant="L2I", config=None, sampler_seed=0))]
fn train<'py>(
    py: Python<'py>,
    model: &PyModel,
    samples: Vec<PySample>,
    variant: &str,
    config: Option<&PyConfig>,
    sampler_seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let cfg = config_or_default(config);
    let tc = TrainConfig {
        variant: variant.parse().map_err(to_py)?,
        loss: cfg.loss,
        optimizer: cfg.optimizer,
        early_stop: cfg.early_stop,
        sampler_seed,
    };
    let samples = unwrap_samples(&samples);
    let start = model.inner.clone();
    let (trained, log) = py
        .detach(|| l2i_core::train(start, &samples, &tc))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("best_step", log.best_step)?;
    d.set_item("best_val_loss", log.best_val_loss)?;
    d.set_item("steps_run", log.steps_run)?;
    d.set_item("stopped_early", log.stopped_early)?;
    let evals: Vec<(usize, f64, f64)> = log
        .evals
        .iter()
        .map(|e| (e.step, e.val_loss, e.val_accuracy))
        .collect();
    d.set_item("evals", evals)?;
    let totals: Vec<f64> = log.steps.iter().map(|(_, b)| b.total).collect();
    d.set_item("train_total", totals)?;
    Ok((PyModel { inner: trained }, d))
}

/// Accuracy, kappa and AUROC on the samples of one domain filter
/// (`source`, `target` or `all`).
#[pyfunction]
#[pyo3(signature = (model, samples, domain="all"))]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, samples: Vec<PySample>, domain: &str) -> PyResult<Bound<'py, PyDict>> {
    let filter: DomainFilter = domain.parse().map_err(to_py)?;
    let s = l2i_core::evaluate(&model.inner, &unwrap_samples(&samples), filter).map_err(to_py)?;
    scores_dict(py, &s)
}

/// All runs of one variant. Returns per-run target and source scores plus
/// `mean [std]` strings for the target domain.
#[pyfunction]
#[pyo3(signature = (config, variant, n_runs=None))]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig, variant: &str, n_runs: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let variant: Variant = variant.parse().map_err(to_py)?;
    let cfg = config.inner.clone();
    let n = n_runs.unwrap_or(cfg.n_runs);
    let result = py
        .detach(|| l2i_core::run_experiment(&cfg, variant, n))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("variant", variant.name())?;
    let mut runs = Vec::new();
    for r in &result.runs {
        let row = PyDict::new(py);
        row.set_item("run", r.run)?;
        row.set_item("target", scores_dict(py, &r.target)?)?;
        match &r.source {
            Some(s) => row.set_item("source", scores_dict(py, s)?)?,
            None => row.set_item("source", py.None())?,
        }
        row.set_item("best_step", r.log.best_step)?;
        runs.push(row);
    }
    d.set_item("runs", runs)?;
    let failures: Vec<(usize, String)> = result.failures.iter().map(|f| (f.run, f.error.clone())).collect();
    d.set_item("failures", failures)?;
    if let Some(t) = &result.target {
        d.set_item("target_accuracy", t.accuracy.format())?;
        d.set_item("target_kappa", t.kappa.format())?;
        d.set_item("target_auroc", t.auroc.map(|a| a.format()))?;
    }
    Ok(d)
}

/// Runs every configured variant, writes all outputs under the configured
/// output directory and returns the markdown table.
#[pyfunction]
fn run_suite(py: Python<'_>, config: &PyConfig) -> PyResult<String> {
    let cfg = config.inner.clone();
    let report = py.detach(|| l2i_core::run_suite(&cfg)).map_err(to_py)?;
    Ok(l2i_core::report::results_table(&report.experiments))
}

fn loss_cfg(r: f64, d: f64) -> LossConfig {
    LossConfig {
        r,
        d,
        ..LossConfig::default()
    }
}

/// Center point loss for one target latent per class (row `i` is class `i`).
#[pyfunction]
#[pyo3(signature = (f_targets, centers, r=0.1, d=1.9))]
fn py_center_point_loss(f_targets: Vec<Vec<f64>>, centers: Vec<Vec<f64>>, r: f64, d: f64) -> PyResult<f64> {
    let mut g = Graph::new();
    let f = g.constant(matrix(&f_targets)?);
    let o = g.constant(matrix(&centers)?);
    let v = center_point_loss(&mut g, f, o, &loss_cfg(r, d)).map_err(to_py)?;
    g.value(v).item().map_err(to_py)
}

/// Mean latent loss of `f` rows against their labels' centers.
#[pyfunction]
#[pyo3(signature = (f, labels, centers, r=0.1))]
fn py_latent_loss(f: Vec<Vec<f64>>, labels: Vec<usize>, centers: Vec<Vec<f64>>, r: f64) -> PyResult<f64> {
    let mut g = Graph::new();
    let fv = g.constant(matrix(&f)?);
    let o = g.constant(matrix(&centers)?);
    let v = latent_loss(&mut g, fv, &labels, o, &loss_cfg(r, 1.9)).map_err(to_py)?;
    g.value(v).item().map_err(to_py)
}

/// Mean cross-entropy of logit rows.
#[pyfunction]
fn py_classification_loss(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    let mut g = Graph::new();
    let z = g.constant(matrix(&logits)?);
    let v = classification_loss(&mut g, z, &labels, None).map_err(to_py)?;
    g.value(v).item().map_err(to_py)
}

#[pyfunction]
fn accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn cohen_kappa(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::cohen_kappa(&pred, &truth).map_err(to_py)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
#[pyfunction]
fn auroc(scores: Vec<f64>, truth: Vec<usize>) -> PyResult<f64> {
    metrics::auroc(&scores, &truth).map_err(to_py)
}

/// `mean [std]` in percent with one decimal.
#[pyfunction]
fn format_mean_std(mean: f64, std: f64) -> String {
    metrics::format_mean_std(mean, std)
}

/// Names of the supported variants.
#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.name()).collect()
}

#[pymodule]
fn l2i(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add("center_point_loss", wrap_pyfunction!(py_center_point_loss, m)?)?;
    m.add("latent_loss", wrap_pyfunction!(py_latent_loss, m)?)?;
    m.add("classification_loss", wrap_pyfunction!(py_classification_loss, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(format_mean_std, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    Ok(())
}
