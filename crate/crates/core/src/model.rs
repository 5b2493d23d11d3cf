//! Encoder, classifier head and learnable center points.
//!
//! The encoder is a ReLU multilayer perceptron whose output is scaled to unit
//! length. The classifier is one linear layer on the normalized latent
//! vector. Center points are an `[n×m]` tensor whose rows live on the unit
//! sphere; the optimizer re-projects them after every update.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{DomainRole, Sample};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{l2_norm, Graph, Tensor, Var};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            encoder_hidden: vec![64, 64],
            latent_dim: 16,
            num_classes: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::Config(format!(
                "model.latent_dim must be >= 2, got {}",
                self.latent_dim
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "model.num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim < 1 || self.encoder_hidden.contains(&0) {
            return Err(Error::Config("model layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Classifier,
    Centers,
}

/// Which parameter groups a forward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMask {
    pub encoder: bool,
    pub classifier: bool,
    pub centers: bool,
}

impl GroupMask {
    pub const ALL: Self = Self {
        encoder: true,
        classifier: true,
        centers: true,
    };
    pub const NONE: Self = Self {
        encoder: false,
        classifier: false,
        centers: false,
    };

    pub fn contains(self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Classifier => self.classifier,
            ParamGroup::Centers => self.centers,
        }
    }
}

/// Fully connected layer `y = x·W + b` with `W: [in×out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn kaiming<R: Rng>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = (gain / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        Self {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("shape matches"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

/// The three disjoint parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Vec<Linear>,
    pub classifier: Linear,
    pub centers: Tensor,
}

impl ModelParams {
    /// Every tensor with its group, in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamGroup, &Tensor)> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push((ParamGroup::Encoder, &l.weight));
            out.push((ParamGroup::Encoder, &l.bias));
        }
        out.push((ParamGroup::Classifier, &self.classifier.weight));
        out.push((ParamGroup::Classifier, &self.classifier.bias));
        out.push((ParamGroup::Centers, &self.centers));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Tensor)> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push((ParamGroup::Encoder, &mut l.weight));
            out.push((ParamGroup::Encoder, &mut l.bias));
        }
        out.push((ParamGroup::Classifier, &mut self.classifier.weight));
        out.push((ParamGroup::Classifier, &mut self.classifier.bias));
        out.push((ParamGroup::Centers, &mut self.centers));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder: Vec<(Var, Var)>,
    pub classifier: (Var, Var),
    pub centers: Var,
}

impl BoundParams {
    /// Normalized latent vectors for a `[B×input_dim]` batch.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.encoder.len() - 1;
        for (i, &(w, b)) in self.encoder.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add_row(z, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        g.l2_normalize(h)
    }

    /// Class logits for `[B×m]` latent vectors.
    pub fn logits(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let (w, b) = self.classifier;
        let z = g.matmul(f, w)?;
        g.add_row(z, b)
    }

    /// Flat list in [`ModelParams::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.encoder.iter().flat_map(|&(w, b)| [w, b]).collect();
        out.push(self.classifier.0);
        out.push(self.classifier.1);
        out.push(self.centers);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub f: Vec<f64>,
    pub domain_tag: DomainRole,
    pub class_tag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: Model,
}

const CHECKPOINT_FORMAT: &str = "l2i-checkpoint-v1";

impl Model {
    /// Seeded Kaiming fan-in initialization; center points come from
    /// [`init_center_points`] on a derived stream.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(rng::derive_seed(config.seed, rng::STREAM_MODEL, 0));
        let mut dims = vec![config.input_dim];
        dims.extend(&config.encoder_hidden);
        dims.push(config.latent_dim);
        let encoder = dims
            .windows(2)
            .map(|w| Linear::kaiming(w[0], w[1], 2.0, &mut r))
            .collect();
        let classifier = Linear::kaiming(config.latent_dim, config.num_classes, 1.0, &mut r);
        let centers = init_center_points(
            config.num_classes,
            config.latent_dim,
            rng::derive_seed(config.seed, rng::STREAM_CENTERS, 0),
        )?;
        let mut model = Self {
            config,
            params: ModelParams {
                encoder,
                classifier,
                centers,
            },
        };
        model.enable_grads();
        Ok(model)
    }

    fn enable_grads(&mut self) {
        for (_, t) in self.params.tensors_mut() {
            t.set_requires_grad(true);
        }
    }

    /// Registers parameters on `g`; groups outside `mask` become constants.
    pub fn bind(&self, g: &mut Graph, mask: GroupMask) -> BoundParams {
        let mut put = |t: &Tensor, on: bool| if on { g.param(t) } else { g.constant(t.detached()) };
        let encoder = self
            .params
            .encoder
            .iter()
            .map(|l| (put(&l.weight, mask.encoder), put(&l.bias, mask.encoder)))
            .collect();
        let classifier = (
            put(&self.params.classifier.weight, mask.classifier),
            put(&self.params.classifier.bias, mask.classifier),
        );
        let centers = put(&self.params.centers, mask.centers);
        BoundParams {
            encoder,
            classifier,
            centers,
        }
    }

    /// Adds the gradients accumulated on `g` into the parameter buffers.
    pub fn collect_grads(&mut self, g: &Graph, bound: &BoundParams) -> Result<()> {
        for ((_, t), v) in self.params.tensors_mut().into_iter().zip(bound.vars()) {
            if let Some(grad) = g.grad(v) {
                t.accumulate_grad(grad)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.params.tensors_mut() {
            t.zero_grad();
        }
    }

    fn input_matrix(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let d = self.config.input_dim;
        let mut values = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::Shape {
                    op: "encode",
                    lhs: vec![d],
                    rhs: vec![r.len()],
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract("encoder input must be finite".into()));
            }
            values.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), d, values)
    }

    /// Latent vectors and softmax scores for a batch of raw inputs.
    pub fn forward_batch(&self, rows: &[&[f64]]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, GroupMask::NONE);
        let x = g.constant(self.input_matrix(rows)?);
        let f = bound.encode(&mut g, x)?;
        let z = bound.logits(&mut g, f)?;
        let scores = softmax_rows(g.value(z));
        Ok((g.value(f).detached(), scores))
    }

    /// Unit-norm latent vector of one input.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (f, _) = self.forward_batch(&[x])?;
        Ok(f.into_values())
    }

    pub fn latent(&self, sample: &Sample) -> Result<LatentVector> {
        Ok(LatentVector {
            f: self.encode(&sample.x)?,
            domain_tag: sample.domain_role,
            class_tag: sample.class_label,
        })
    }

    /// Softmax class scores for a latent vector.
    pub fn classify(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.config.latent_dim {
            return Err(Error::Shape {
                op: "classify",
                lhs: vec![self.config.latent_dim],
                rhs: vec![f.len()],
            });
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, GroupMask::NONE);
        let fv = g.constant(Tensor::matrix(1, f.len(), f.to_vec())?);
        let z = bound.logits(&mut g, fv)?;
        Ok(softmax_rows(g.value(z)).into_values())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: self.clone(),
        };
        let bytes = serde_json::to_vec(&ck)?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("unknown checkpoint format '{}'", ck.format),
            });
        }
        let mut model = ck.model;
        model.config.validate()?;
        model.check_shapes()?;
        model.enable_grads();
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        let mut dims = vec![cfg.input_dim];
        dims.extend(&cfg.encoder_hidden);
        dims.push(cfg.latent_dim);
        let mut expected: Vec<Vec<usize>> = dims
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect();
        expected.push(vec![cfg.latent_dim, cfg.num_classes]);
        expected.push(vec![cfg.num_classes]);
        expected.push(vec![cfg.num_classes, cfg.latent_dim]);
        let got: Vec<Vec<usize>> = self
            .params
            .tensors()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        if got != expected {
            return Err(Error::Shape {
                op: "checkpoint",
                lhs: expected.concat(),
                rhs: got.concat(),
            });
        }
        Ok(())
    }
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / s));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Rows drawn from an isotropic Gaussian and normalized. For two classes the
/// pair is redrawn until the centers are at least 0.5 apart.
pub fn init_center_points(n: usize, m: usize, seed: u64) -> Result<Tensor> {
    if n < 2 || m < 2 {
        return Err(Error::Config(format!(
            "center points need n >= 2 and m >= 2, got n={n}, m={m}"
        )));
    }
    let mut r = rng::seeded(seed);
    loop {
        let mut values = Vec::with_capacity(n * m);
        for _ in 0..n {
            let row: Vec<f64> = loop {
                let row: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut r)).collect();
                if l2_norm(&row) > 1e-6 {
                    break row;
                }
            };
            let norm = l2_norm(&row);
            values.extend(row.iter().map(|v| v / norm));
        }
        let t = Tensor::matrix(n, m, values)?;
        if n != 2 {
            return Ok(t);
        }
        let gap: Vec<f64> = t.row(0).iter().zip(t.row(1)).map(|(a, b)| a - b).collect();
        if l2_norm(&gap) >= 0.5 {
            return Ok(t);
        }
    }
}

/// `o_1 = (1,…,1)/√m`, `o_2 = -o_1`; only defined for two classes.
pub fn fixed_center_points(n: usize, m: usize) -> Result<Tensor> {
    if n != 2 {
        return Err(Error::UnsupportedVariant(format!(
            "fixed center points are defined for 2 classes, got {n}"
        )));
    }
    let v = 1.0 / (m as f64).sqrt();
    let mut values = vec![v; m];
    values.extend(std::iter::repeat_n(-v, m));
    Tensor::matrix(2, m, values)
}
