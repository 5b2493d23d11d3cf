//! Classification, center point and latent losses.
//!
//! Gradient routing is expressed with detach points:
//! - the classification loss is computed on detached latent vectors, so only
//!   the classifier head receives its gradient;
//! - the latent loss detaches the center points, so only the encoder moves;
//! - the center point loss detaches nothing and updates both the center
//!   points and the encoder (through the target-domain latents).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_cen: f64,
    pub lambda_latent: f64,
    /// Radius of the no-penalty ball around each center.
    pub r: f64,
    /// Minimum distance demanded between two centers.
    pub d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cen: 100.0,
            lambda_latent: 1.0,
            r: 0.1,
            d: 1.9,
        }
    }
}

impl LossConfig {
    /// Without margins (`d = 2`, `r = 0`).
    pub fn without_margins(self) -> Self {
        Self {
            r: 0.0,
            d: 2.0,
            ..self
        }
    }

    /// Checks `r >= 0`, `0 < d <= 2`, and `d > 2r` when `margins` is set.
    pub fn validate(&self, margins: bool) -> Result<()> {
        for (name, v) in [
            ("loss.lambda_cen", self.lambda_cen),
            ("loss.lambda_latent", self.lambda_latent),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::Config(format!("loss.r must be >= 0, got {}", self.r)));
        }
        if !(self.d > 0.0 && self.d <= 2.0) {
            return Err(Error::Config(format!(
                "loss.d must satisfy 0 < d <= 2, got {}",
                self.d
            )));
        }
        if margins && self.d <= 2.0 * self.r {
            return Err(Error::Config(format!(
                "loss.d must exceed 2*loss.r so the balls cannot overlap, got d={} r={}",
                self.d, self.r
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub cen: f64,
    pub latent: f64,
    pub total: f64,
}

/// Mean cross-entropy over the rows of `logits`, optionally with per-row
/// weights multiplying each term. Callers route the gradient by passing
/// logits computed from detached latents.
pub fn classification_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<Var> {
    let per_row = g.softmax_cross_entropy(logits, labels)?;
    let per_row = match weights {
        None => per_row,
        Some(w) => {
            if w.len() != labels.len() {
                return Err(Error::Shape {
                    op: "classification_loss",
                    lhs: vec![labels.len()],
                    rhs: vec![w.len()],
                });
            }
            let wv = g.constant(Tensor::new(g.value(per_row).shape().to_vec(), w.to_vec())?);
            g.mul(per_row, wv)?
        }
    };
    g.mean(per_row)
}

/// `max(||a_j - b_j|| - r, 0)^2` per row.
fn ball_penalty(g: &mut Graph, a: Var, b: Var, r: f64) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let dist = g.row_norm(diff)?;
    let excess = g.add_scalar(dist, -r)?;
    let clamped = g.max_scalar(excess, 0.0)?;
    g.square(clamped)
}

/// `Σ_i Σ_{k≠i} ½ max(d - ||o_k - o_i||, 0)^2` over ordered pairs.
fn separation_penalty(g: &mut Graph, centers: Var, d: f64) -> Result<Var> {
    let n = g.value(centers).rows();
    let (is, ks): (Vec<usize>, Vec<usize>) = (0..n)
        .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
        .unzip();
    let oi = g.gather_rows(centers, &is)?;
    let ok = g.gather_rows(centers, &ks)?;
    let diff = g.sub(ok, oi)?;
    let dist = g.row_norm(diff)?;
    let short = g.scale(dist, -1.0)?;
    let short = g.add_scalar(short, d)?;
    let clamped = g.max_scalar(short, 0.0)?;
    let sq = g.square(clamped)?;
    let s = g.sum(sq)?;
    g.scale(s, 0.5)
}

fn check_centers(g: &Graph, f: Var, centers: Var) -> Result<(usize, usize)> {
    let (fs, os) = (g.value(f).shape(), g.value(centers).shape());
    if os.len() != 2 || fs.len() != 2 || fs[1] != os[1] {
        return Err(Error::Shape {
            op: "center loss",
            lhs: fs.to_vec(),
            rhs: os.to_vec(),
        });
    }
    Ok((os[0], os[1]))
}

/// Center point loss summed over one target-domain latent per class:
///
/// `Σ_i [ max(||f_{i,t} - o_i|| - r, 0)^2 + Σ_{k≠i} ½ max(d - ||o_k - o_i||, 0)^2 ]`
///
/// Row `i` of `f_targets` must be the target latent of class `i`. Each
/// unordered center pair enters twice with weight ½, i.e. once in total.
pub fn center_point_loss(g: &mut Graph, f_targets: Var, centers: Var, cfg: &LossConfig) -> Result<Var> {
    let (n, _) = check_centers(g, f_targets, centers)?;
    let rows = g.value(f_targets).rows();
    if rows != n {
        return Err(Error::Sampler(format!(
            "center point loss needs one target latent per class: {rows} rows for {n} classes"
        )));
    }
    let pull = ball_penalty(g, f_targets, centers, cfg.r)?;
    let pull = g.sum(pull)?;
    let push = separation_penalty(g, centers, cfg.d)?;
    g.add(pull, push)
}

/// Center point loss in expectation over the per-class draw: the pull term
/// is averaged within each class of `f` before summing over classes. Used
/// to score a validation set that holds several target latents per class.
pub fn expected_center_point_loss(
    g: &mut Graph,
    f: Var,
    labels: &[usize],
    centers: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let (n, _) = check_centers(g, f, centers)?;
    let mut counts = vec![0usize; n];
    for &l in labels {
        *counts.get_mut(l).ok_or(Error::Index { index: l, len: n })? += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Sampler(format!("no target latent of class {c}")));
    }
    let own = g.gather_rows(centers, labels)?;
    let pull = ball_penalty(g, f, own, cfg.r)?;
    let w: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
    let wv = g.constant(Tensor::vector(w));
    let pull = g.mul(pull, wv)?;
    let pull = g.sum(pull)?;
    let push = separation_penalty(g, centers, cfg.d)?;
    g.add(pull, push)
}

/// Mean over the rows of `f` of `max(||f_j - o_{label_j}|| - r, 0)^2`.
/// The centers are detached, so only the encoder receives this gradient.
pub fn latent_loss(g: &mut Graph, f: Var, labels: &[usize], centers: Var, cfg: &LossConfig) -> Result<Var> {
    let (n, _) = check_centers(g, f, centers)?;
    if labels.len() != g.value(f).rows() {
        return Err(Error::Shape {
            op: "latent_loss",
            lhs: g.value(f).shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Index { index: bad, len: n });
    }
    let fixed = g.detach(centers);
    let own = g.gather_rows(fixed, labels)?;
    let pen = ball_penalty(g, f, own, cfg.r)?;
    g.mean(pen)
}

/// `cls + λ_cen·cen + λ_latent·latent`, with the term values recorded.
pub fn total_loss(
    g: &mut Graph,
    cls: Var,
    cen: Var,
    latent: Var,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let mut terms = [0.0; 3];
    for (slot, (name, v)) in terms
        .iter_mut()
        .zip([("cls", cls), ("cen", cen), ("latent", latent)])
    {
        let value = g.value(v).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss term {name}"),
            });
        }
        *slot = value;
    }
    let wc = g.scale(cen, cfg.lambda_cen)?;
    let wl = g.scale(latent, cfg.lambda_latent)?;
    let t = g.add(cls, wc)?;
    let t = g.add(t, wl)?;
    let total = g.value(t).item()?;
    Ok((
        t,
        LossBreakdown {
            cls: terms[0],
            cen: terms[1],
            latent: terms[2],
            total,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check_many;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn cen_value(f: &[f64], o: &[f64], m: usize, cfg: &LossConfig) -> f64 {
        let n = o.len() / m;
        let mut g = Graph::new();
        let fv = g.constant(mat(n, m, f));
        let ov = g.constant(mat(n, m, o));
        let l = center_point_loss(&mut g, fv, ov, cfg).unwrap();
        g.value(l).item().unwrap()
    }

    #[test]
    fn config_bounds() {
        let ok = LossConfig::default();
        ok.validate(true).unwrap();
        assert!(LossConfig { d: 2.5, ..ok }.validate(true).is_err());
        assert!(LossConfig { r: 1.0, ..ok }.validate(true).is_err());
        LossConfig { r: 1.0, ..ok }.validate(false).unwrap();
        assert!(LossConfig { r: -0.1, ..ok }.validate(false).is_err());
        ok.without_margins().validate(true).unwrap();
    }

    #[test]
    fn center_loss_zero_when_inactive() {
        let cfg = LossConfig::default();
        let o = [1.0, 0.0, -1.0, 0.0];
        assert_eq!(cen_value(&o, &o, 2, &cfg), 0.0);
    }

    #[test]
    fn center_loss_orthogonal_centers() {
        let cfg = LossConfig::default();
        let o = [1.0, 0.0, 0.0, 1.0];
        let expected = 2.0 * 0.5 * (1.9 - 2f64.sqrt()).powi(2);
        let got = cen_value(&o, &o, 2, &cfg);
        assert!((got - expected).abs() < 1e-12, "{got}");
        assert!((got - 0.235_988).abs() < 1e-6);
    }

    #[test]
    fn center_loss_rejects_missing_class() {
        let mut g = Graph::new();
        let f = g.constant(mat(1, 2, &[1.0, 0.0]));
        let o = g.constant(mat(2, 2, &[1.0, 0.0, -1.0, 0.0]));
        assert!(matches!(
            center_point_loss(&mut g, f, o, &LossConfig::default()),
            Err(Error::Sampler(_))
        ));
    }

    #[test]
    fn latent_loss_cases() {
        let cfg = LossConfig::default();
        let eval = |f: &[f64], o: &[f64], label: usize, cfg: &LossConfig| {
            let mut g = Graph::new();
            let fv = g.constant(mat(1, 2, f));
            let ov = g.constant(mat(2, 2, o));
            let l = latent_loss(&mut g, fv, &[label], ov, cfg).unwrap();
            g.value(l).item().unwrap()
        };
        let o = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(eval(&[1.0, 0.0], &o, 0, &cfg), 0.0);
        let v = eval(&[1.0, 0.0], &o, 1, &cfg);
        assert!((v - (2f64.sqrt() - 0.1).powi(2)).abs() < 1e-12);

        // boundary of the ball: f at distance exactly r, then r + δ
        let cfg = LossConfig { r: 0.5, ..cfg };
        assert_eq!(eval(&[0.5, 0.0], &[1.0, 0.0, 0.0, 1.0], 0, &cfg), 0.0);
        let v = eval(&[0.25, 0.0], &[1.0, 0.0, 0.0, 1.0], 0, &cfg);
        assert!((v - 0.0625).abs() < 1e-15);

        let mut g = Graph::new();
        let fv = g.constant(mat(1, 2, &[1.0, 0.0]));
        let ov = g.constant(mat(2, 2, &o));
        assert!(matches!(
            latent_loss(&mut g, fv, &[2], ov, &LossConfig::default()),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn latent_loss_leaves_centers_alone() {
        let mut g = Graph::new();
        let f = g.param(&mat(1, 2, &[0.6, 0.8]));
        let o = g.param(&mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let l = latent_loss(&mut g, f, &[0], o, &LossConfig::default()).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(o).unwrap().iter().all(|&v| v == 0.0));
        assert!(g.grad(f).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn center_loss_reaches_both_inputs() {
        let mut g = Graph::new();
        let f = g.param(&mat(2, 2, &[0.0, 1.0, 0.0, -1.0]));
        let o = g.param(&mat(2, 2, &[1.0, 0.0, 0.6, 0.8]));
        let l = center_point_loss(&mut g, f, o, &LossConfig::default()).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(o).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.grad(f).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn center_loss_gradients_match_finite_differences() {
        let f = mat(2, 3, &[0.2, 0.9, -0.3, -0.5, 0.1, 0.8]);
        let o = mat(2, 3, &[0.7, 0.1, 0.2, 0.3, -0.2, 0.9]);
        let err = finite_difference_check_many(
            |g, v| center_point_loss(g, v[0], v[1], &LossConfig::default()),
            &[f, o],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn weighted_classification_loss() {
        let mut g = Graph::new();
        let z = g.constant(mat(2, 2, &[0.0, 0.0, 0.0, 0.0]));
        let l = classification_loss(&mut g, z, &[0, 1], Some(&[1.0, 3.0])).unwrap();
        assert!((g.value(l).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        let l = classification_loss(&mut g, z, &[0, 1], None).unwrap();
        assert!((g.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn expected_center_loss_averages_within_class() {
        let cfg = LossConfig::default();
        let o = mat(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let f = mat(3, 2, &[0.0, 1.0, 1.0, 0.0, -1.0, 0.0]);
        let mut g = Graph::new();
        let fv = g.constant(f);
        let ov = g.constant(o);
        let l = expected_center_point_loss(&mut g, fv, &[0, 0, 1], ov, &cfg).unwrap();
        let expected = 0.5 * (2f64.sqrt() - 0.1).powi(2);
        assert!((g.value(l).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut g = Graph::new();
        let cfg = LossConfig::default();
        let cls = g.constant(Tensor::scalar(0.7));
        let cen = g.constant(Tensor::scalar(0.01));
        let lat = g.constant(Tensor::scalar(0.2));
        let (t, b) = total_loss(&mut g, cls, cen, lat, &cfg).unwrap();
        assert!((g.value(t).item().unwrap() - 1.9).abs() < 1e-12);
        assert!((b.total - (b.cls + 100.0 * b.cen + b.latent)).abs() < 1e-9);

        let z = g.constant(Tensor::scalar(0.0));
        let (t, _) = total_loss(&mut g, z, z, z, &cfg).unwrap();
        assert_eq!(g.value(t).item().unwrap(), 0.0);

        let vanilla = LossConfig {
            lambda_cen: 0.0,
            lambda_latent: 0.0,
            ..cfg
        };
        let (t, _) = total_loss(&mut g, cls, cen, lat, &vanilla).unwrap();
        assert_eq!(g.value(t).item().unwrap(), 0.7);
    }
}
