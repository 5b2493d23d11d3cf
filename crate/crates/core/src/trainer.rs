//! Training variants, the routed training step, early stopping and
//! evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    class_domain_weights, Batch, BatchSampler, ClassAwareSampler, DomainRole, Sample, Split,
};
use crate::error::{Error, Result};
use crate::losses::{
    center_point_loss, classification_loss, expected_center_point_loss, latent_loss, total_loss,
    LossBreakdown, LossConfig,
};
use crate::metrics::{self, MetricScores};
use crate::model::{fixed_center_points, GroupMask, Model};
use crate::numerics::{Graph, Tensor, Var};
use crate::optim::{adam_step, AdamState, OptimizerConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    L2I,
    Vanilla,
    ClassAware,
    Weighted,
    Fixed,
    NoMargin,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Vanilla,
        Variant::ClassAware,
        Variant::Weighted,
        Variant::L2I,
        Variant::Fixed,
        Variant::NoMargin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::L2I => "L2I",
            Variant::Vanilla => "Vanilla",
            Variant::ClassAware => "ClassAware",
            Variant::Weighted => "Weighted",
            Variant::Fixed => "Fixed",
            Variant::NoMargin => "NoMargin",
        }
    }

    /// Variants trained with the center point and latent losses and a
    /// classification loss that only reaches the classifier head.
    pub fn uses_center_points(self) -> bool {
        matches!(self, Variant::L2I | Variant::Fixed | Variant::NoMargin)
    }

    /// Variants that need `d > 2r`.
    pub fn uses_margins(self) -> bool {
        matches!(self, Variant::L2I | Variant::Fixed)
    }

    /// Loss weights and margins after applying the variant's rules.
    pub fn effective_loss(self, cfg: &LossConfig) -> LossConfig {
        match self {
            Variant::L2I | Variant::Fixed => *cfg,
            Variant::NoMargin => cfg.without_margins(),
            Variant::Vanilla | Variant::ClassAware | Variant::Weighted => LossConfig {
                lambda_cen: 0.0,
                lambda_latent: 0.0,
                ..*cfg
            },
        }
    }

    pub fn trainable(self) -> GroupMask {
        match self {
            Variant::L2I | Variant::NoMargin => GroupMask::ALL,
            _ => GroupMask {
                encoder: true,
                classifier: true,
                centers: false,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "l2i" => Variant::L2I,
            "vanilla" => Variant::Vanilla,
            "classaware" => Variant::ClassAware,
            "weighted" => Variant::Weighted,
            "fixed" => Variant::Fixed,
            "nomargin" => Variant::NoMargin,
            _ => return Err(Error::UnsupportedVariant(s.trim().to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Non-improving evaluations tolerated before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 20,
            max_steps: 5000,
            eval_interval: 25,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("early_stop.patience must be >= 1".into()));
        }
        if self.eval_interval < 1 {
            return Err(Error::Config("early_stop.eval_interval must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled,
    Stop,
}

/// Patience counter over a monitored loss (lower is better).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_step: usize,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_step: 0,
            stalled: 0,
        }
    }

    pub fn observe(&mut self, step: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_step = step;
            self.stalled = 0;
            return Verdict::Improved;
        }
        self.stalled += 1;
        if self.stalled >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Stalled
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_step, self.best)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<M> {
    pub best: M,
    pub best_step: usize,
    pub best_loss: f64,
    /// `(step, validation loss)` in evaluation order, starting at step 0.
    pub evaluations: Vec<(usize, f64)>,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Generic early-stopping loop: validates at step 0 and every
/// `eval_interval` steps, keeps a snapshot of the best state, and stops when
/// `patience` evaluations in a row fail to improve or `max_steps` is hit.
pub fn fit<T, M, S, V, C>(
    state: &mut T,
    cfg: &EarlyStopConfig,
    mut step: S,
    mut validate: V,
    snapshot: C,
) -> Result<FitOutcome<M>>
where
    S: FnMut(&mut T, usize) -> Result<()>,
    V: FnMut(&T, usize) -> Result<f64>,
    C: Fn(&T) -> M,
{
    cfg.validate()?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let first = validate(state, 0)?;
    stopper.observe(0, first);
    let mut best = snapshot(state);
    let mut evaluations = vec![(0, first)];
    let mut steps_run = 0;
    let mut stopped_early = false;
    for s in 1..=cfg.max_steps {
        step(state, s)?;
        steps_run = s;
        if s % cfg.eval_interval != 0 {
            continue;
        }
        let loss = validate(state, s)?;
        evaluations.push((s, loss));
        match stopper.observe(s, loss) {
            Verdict::Improved => best = snapshot(state),
            Verdict::Stalled => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_step, best_loss) = stopper.best();
    Ok(FitOutcome {
        best,
        best_step,
        best_loss,
        evaluations,
        steps_run,
        stopped_early,
    })
}

fn input_rows(samples: &[Sample], idx: &[usize]) -> Result<Tensor> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut values = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        values.extend_from_slice(&samples[i].x);
    }
    Tensor::matrix(idx.len(), dim, values)
}

/// Records the variant's objective for `batch` on `g` and returns the total
/// loss handle, its breakdown, and the bound parameters.
fn record_objective(
    g: &mut Graph,
    model: &Model,
    train: &[Sample],
    batch: &Batch,
    variant: Variant,
    loss_cfg: &LossConfig,
    weights: Option<&[f64]>,
) -> Result<(Var, LossBreakdown, crate::model::BoundParams)> {
    let cfg = variant.effective_loss(loss_cfg);
    let bound = model.bind(g, variant.trainable());
    let x = g.constant(input_rows(train, &batch.random_part)?);
    let labels: Vec<usize> = batch.random_part.iter().map(|&i| train[i].class_label).collect();
    let f = bound.encode(g, x)?;
    let batch_weights: Option<Vec<f64>> =
        weights.map(|w| batch.random_part.iter().map(|&i| w[i]).collect());

    let (cls, cen, latent) = if variant.uses_center_points() {
        let frozen = g.detach(f);
        let logits = bound.logits(g, frozen)?;
        let cls = classification_loss(g, logits, &labels, batch_weights.as_deref())?;
        let latent = latent_loss(g, f, &labels, bound.centers, &cfg)?;
        let xt = g.constant(input_rows(train, &batch.center_part)?);
        let ft = bound.encode(g, xt)?;
        let cen = center_point_loss(g, ft, bound.centers, &cfg)?;
        (cls, cen, latent)
    } else {
        let logits = bound.logits(g, f)?;
        let cls = classification_loss(g, logits, &labels, batch_weights.as_deref())?;
        let zero = g.constant(Tensor::scalar(0.0));
        (cls, zero, zero)
    };
    let (total, breakdown) = total_loss(g, cls, cen, latent, &cfg)?;
    Ok((total, breakdown, bound))
}

/// Fills the model's gradient buffers with the routed gradient of the
/// variant's objective on `batch`, without updating parameters.
pub fn compute_gradients(
    model: &mut Model,
    train: &[Sample],
    batch: &Batch,
    variant: Variant,
    loss_cfg: &LossConfig,
    weights: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let (total, breakdown, bound) =
        record_objective(&mut g, model, train, batch, variant, loss_cfg, weights)?;
    g.backward(total)?;
    model.zero_grad();
    model.collect_grads(&g, &bound)?;
    Ok(breakdown)
}

/// One optimization step of `variant` on `batch`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    train: &[Sample],
    batch: &Batch,
    variant: Variant,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
    weights: Option<&[f64]>,
) -> Result<LossBreakdown> {
    let breakdown = compute_gradients(model, train, batch, variant, loss_cfg, weights)?;
    adam_step(&mut model.params, adam, opt, variant.trainable())?;
    Ok(breakdown)
}

#[derive(Debug, Clone)]
enum Sampler {
    TwoPart(BatchSampler),
    ClassAware(ClassAwareSampler),
}

/// Owns the model, optimizer state, sampler and rng of one training run.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub model: Model,
    pub adam: AdamState,
    variant: Variant,
    loss: LossConfig,
    opt: OptimizerConfig,
    train: &'a [Sample],
    sampler: Sampler,
    weights: Option<Vec<f64>>,
    rng: rng::Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(
        mut model: Model,
        variant: Variant,
        loss: LossConfig,
        opt: OptimizerConfig,
        train: &'a [Sample],
        sampler_seed: u64,
    ) -> Result<Self> {
        opt.validate()?;
        variant
            .effective_loss(&loss)
            .validate(variant.uses_margins())?;
        let n = model.config.num_classes;
        if variant == Variant::Fixed {
            let mut centers = fixed_center_points(n, model.config.latent_dim)?;
            centers.set_requires_grad(true);
            model.params.centers = centers;
        }
        let sampler = match variant {
            Variant::ClassAware => Sampler::ClassAware(ClassAwareSampler::new(train, n)?),
            Variant::Vanilla | Variant::Weighted => {
                if train.len() < crate::data::BATCH_SIZE {
                    return Err(Error::Sampler(format!(
                        "training set has {} samples, a batch needs {}",
                        train.len(),
                        crate::data::BATCH_SIZE
                    )));
                }
                Sampler::TwoPart(BatchSampler::new(train, n)?)
            }
            _ => Sampler::TwoPart(BatchSampler::new(train, n)?),
        };
        let weights = (variant == Variant::Weighted).then(|| class_domain_weights(train));
        let adam = AdamState::new(&model.params);
        Ok(Self {
            model,
            adam,
            variant,
            loss,
            opt,
            train,
            sampler,
            weights,
            rng: rng::seeded(sampler_seed),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn next_batch(&mut self) -> Batch {
        match &mut self.sampler {
            Sampler::TwoPart(s) => s.sample(&mut self.rng),
            Sampler::ClassAware(s) => s.sample(&mut self.rng),
        }
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let batch = self.next_batch();
        train_step(
            &mut self.model,
            &mut self.adam,
            self.train,
            &batch,
            self.variant,
            &self.loss,
            &self.opt,
            self.weights.as_deref(),
        )
    }
}

/// Which domain role an evaluation keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainFilter {
    Source,
    Target,
    All,
}

impl DomainFilter {
    pub fn keeps(self, role: DomainRole) -> bool {
        match self {
            DomainFilter::All => true,
            DomainFilter::Source => role == DomainRole::Source,
            DomainFilter::Target => role == DomainRole::Target,
        }
    }
}

impl fmt::Display for DomainFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainFilter::Source => "source",
            DomainFilter::Target => "target",
            DomainFilter::All => "all",
        })
    }
}

impl FromStr for DomainFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" => Ok(DomainFilter::Source),
            "target" => Ok(DomainFilter::Target),
            "all" => Ok(DomainFilter::All),
            other => Err(Error::Config(format!("unknown domain filter '{other}'"))),
        }
    }
}

/// Argmax predictions (lowest index on ties) and class-1 scores.
pub fn predict(model: &Model, samples: &[&Sample]) -> Result<(Vec<usize>, Vec<f64>)> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let (_, scores) = model.forward_batch(&rows)?;
    let mut pred = Vec::with_capacity(samples.len());
    let mut class1 = Vec::with_capacity(samples.len());
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        pred.push(best);
        class1.push(row.get(1).copied().unwrap_or(0.0));
    }
    Ok((pred, class1))
}

pub fn evaluate(model: &Model, samples: &[Sample], filter: DomainFilter) -> Result<MetricScores> {
    let kept: Vec<&Sample> = samples.iter().filter(|s| filter.keeps(s.domain_role)).collect();
    if kept.is_empty() {
        return Err(Error::Evaluation(format!("no {filter} samples to evaluate")));
    }
    let truth: Vec<usize> = kept.iter().map(|s| s.class_label).collect();
    let (pred, class1) = predict(model, &kept)?;
    metrics::score(&pred, &truth, &class1)
}

/// Early-stopping criterion on a target-domain validation set: the full
/// objective for center-point variants (the center term in expectation over
/// the per-class draw), the plain classification loss otherwise.
pub fn validation_loss(
    model: &Model,
    val_target: &[Sample],
    variant: Variant,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    if val_target.is_empty() {
        return Err(Error::Config("no target-domain validation data".into()));
    }
    let cfg = variant.effective_loss(loss_cfg);
    let mut g = Graph::new();
    let bound = model.bind(&mut g, GroupMask::NONE);
    let idx: Vec<usize> = (0..val_target.len()).collect();
    let x = g.constant(input_rows(val_target, &idx)?);
    let labels: Vec<usize> = val_target.iter().map(|s| s.class_label).collect();
    let f = bound.encode(&mut g, x)?;
    let logits = bound.logits(&mut g, f)?;
    let cls = classification_loss(&mut g, logits, &labels, None)?;
    if !variant.uses_center_points() {
        return g.value(cls).item();
    }
    let latent = latent_loss(&mut g, f, &labels, bound.centers, &cfg)?;
    let cen = expected_center_point_loss(&mut g, f, &labels, bound.centers, &cfg)?;
    let (total, _) = total_loss(&mut g, cls, cen, latent, &cfg)?;
    g.value(total).item()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<(usize, LossBreakdown)>,
    pub evals: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// `step,cls,cen,latent,total` rows.
    pub fn losses_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "cls", "cen", "latent", "total"])?;
        for (s, b) in &self.steps {
            w.write_record([
                s.to_string(),
                b.cls.to_string(),
                b.cen.to_string(),
                b.latent.to_string(),
                b.total.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// `step,val_loss,val_accuracy,best` rows.
    pub fn validation_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "val_loss", "val_accuracy", "best"])?;
        for e in &self.evals {
            w.write_record([
                e.step.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
                u8::from(e.step == self.best_step).to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub early_stop: EarlyStopConfig,
    pub sampler_seed: u64,
}

/// Trains `model` on the train split of `samples`, early-stopping on the
/// target-domain validation split, and returns the best checkpoint.
pub fn train(model: Model, samples: &[Sample], cfg: &TrainConfig) -> Result<(Model, TrainingLog)> {
    let train_set: Vec<Sample> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .cloned()
        .collect();
    let val_target: Vec<Sample> = samples
        .iter()
        .filter(|s| s.split == Split::Val && s.domain_role == DomainRole::Target)
        .cloned()
        .collect();
    if val_target.is_empty() {
        return Err(Error::Config("no target-domain validation data".into()));
    }
    let mut trainer = Trainer::new(
        model,
        cfg.variant,
        cfg.loss,
        cfg.optimizer,
        &train_set,
        cfg.sampler_seed,
    )?;
    let mut log = TrainingLog::default();
    let mut evals = Vec::new();
    let outcome = {
        let log_steps = &mut log.steps;
        fit(
            &mut trainer,
            &cfg.early_stop,
            |t, s| {
                let b = t.step().map_err(|e| Error::Training {
                    step: s,
                    source: Box::new(e),
                })?;
                log_steps.push((s, b));
                Ok(())
            },
            |t, s| {
                let loss = validation_loss(&t.model, &val_target, cfg.variant, &cfg.loss)?;
                let acc = evaluate(&t.model, &val_target, DomainFilter::Target)?.accuracy;
                evals.push(EvalRecord {
                    step: s,
                    val_loss: loss,
                    val_accuracy: acc,
                });
                Ok(loss)
            },
            |t| t.model.clone(),
        )?
    };
    log.evals = evals;
    log.best_step = outcome.best_step;
    log.best_val_loss = outcome.best_loss;
    log.steps_run = outcome.steps_run;
    log.stopped_early = outcome.stopped_early;
    let mut best = outcome.best;
    best.zero_grad();
    Ok((best, log))
}
