//! Adam with per-group learning rates and coupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupMask, ModelParams, ParamGroup};
use crate::numerics::l2_norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Added as `weight_decay * θ` to encoder and classifier gradients.
    pub weight_decay: f64,
    pub lr_centers: f64,
    pub lr_encoder_classifier: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 5e-5,
            lr_centers: 1e-4,
            lr_encoder_classifier: 5e-5,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("optimizer.beta1", self.beta1), ("optimizer.beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        for (name, v) in [
            ("optimizer.lr_centers", self.lr_centers),
            ("optimizer.lr_encoder_classifier", self.lr_encoder_classifier),
            ("optimizer.eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Centers => self.lr_centers,
            ParamGroup::Encoder | ParamGroup::Classifier => self.lr_encoder_classifier,
        }
    }

    pub fn decay(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Centers => 0.0,
            ParamGroup::Encoder | ParamGroup::Classifier => self.weight_decay,
        }
    }
}

/// Moment buffers per parameter tensor, in [`ModelParams::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Returns whether
/// any coordinate changed.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    theta: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &OptimizerConfig,
) -> bool {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut changed = false;
    for i in 0..theta.len() {
        let g = grad[i] + weight_decay * theta[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        let next = theta[i] - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        changed |= next != theta[i];
        theta[i] = next;
    }
    changed
}

/// Applies one step to every group in `trainable` using the gradients held
/// in the parameter buffers, then re-projects moved center rows onto the
/// unit sphere.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    trainable: GroupMask,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let mut centers_moved = false;
    for (k, (group, tensor)) in params.tensors_mut().into_iter().enumerate() {
        if !trainable.contains(group) {
            continue;
        }
        let grad = tensor
            .grad()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tensor.len()]);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {group:?} parameter {k}"),
            });
        }
        let changed = adam_update(
            tensor.values_mut(),
            &grad,
            &mut state.first[k],
            &mut state.second[k],
            t,
            cfg.learning_rate(group),
            cfg.decay(group),
            cfg,
        );
        if group == ParamGroup::Centers {
            centers_moved |= changed;
        }
    }
    if centers_moved {
        project_rows_to_sphere(params)?;
    }
    Ok(())
}

fn project_rows_to_sphere(params: &mut ModelParams) -> Result<()> {
    let c = &mut params.centers;
    for i in 0..c.rows() {
        let row = c.row_mut(i);
        let n = l2_norm(row);
        if n <= crate::numerics::NORM_EPSILON {
            return Err(Error::DegenerateVector { norm: n });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimizerConfig::default();
        let mut theta = [0.3];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, 1e-3, 0.0, &cfg);
        // m̂ = 1, v̂ = 1, step = lr / (1 + eps)
        let expected = 0.3 - 1e-3 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!(((0.3 - theta[0]) - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_grad_zero_decay_is_a_no_op() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut model = Model::new(ModelConfig::default()).unwrap();
        let before = model.params.clone();
        let mut state = AdamState::new(&model.params);
        adam_step(&mut model.params, &mut state, &cfg, GroupMask::ALL).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn centers_stay_on_sphere() {
        let cfg = OptimizerConfig {
            lr_centers: 0.1,
            ..OptimizerConfig::default()
        };
        let mut model = Model::new(ModelConfig::default()).unwrap();
        let mut state = AdamState::new(&model.params);
        for step in 0..20 {
            let g: Vec<f64> = (0..model.params.centers.len())
                .map(|i| ((i * 7 + step) % 5) as f64 - 2.0)
                .collect();
            model.zero_grad();
            model.params.centers.accumulate_grad(&g).unwrap();
            adam_step(&mut model.params, &mut state, &cfg, GroupMask::ALL).unwrap();
            for i in 0..model.params.centers.rows() {
                assert!((l2_norm(model.params.centers.row(i)) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn masked_groups_are_untouched() {
        let mut model = Model::new(ModelConfig::default()).unwrap();
        let before = model.params.clone();
        for (_, t) in model.params.tensors_mut() {
            let ones = vec![1.0; t.len()];
            t.accumulate_grad(&ones).unwrap();
        }
        let mut state = AdamState::new(&model.params);
        let mask = GroupMask {
            encoder: false,
            classifier: true,
            centers: false,
        };
        adam_step(&mut model.params, &mut state, &OptimizerConfig::default(), mask).unwrap();
        let values = |p: &ModelParams, g: ParamGroup| -> Vec<f64> {
            p.tensors()
                .iter()
                .filter(|(grp, _)| *grp == g)
                .flat_map(|(_, t)| t.values().to_vec())
                .collect()
        };
        assert_eq!(values(&model.params, ParamGroup::Encoder), values(&before, ParamGroup::Encoder));
        assert_eq!(values(&model.params, ParamGroup::Centers), values(&before, ParamGroup::Centers));
        assert_ne!(
            values(&model.params, ParamGroup::Classifier),
            values(&before, ParamGroup::Classifier)
        );
    }

    #[test]
    fn config_validation() {
        OptimizerConfig::default().validate().unwrap();
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            lr_centers: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
