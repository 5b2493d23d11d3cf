//! Two-dimensional PCA projection of latent vectors for external plotting.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::{DomainRole, Sample};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub pc1: f64,
    pub pc2: f64,
    pub class_label: usize,
    pub domain_role: DomainRole,
}

/// Projects the rows of `points` onto their top two principal axes. Each
/// axis is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 3 {
        return Err(Error::Contract(format!(
            "projection needs at least 3 samples, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim < 2 {
        return Err(Error::Contract("projection needs vectors of length >= 2".into()));
    }
    let n = points.len();
    let x = DMatrix::from_fn(n, dim, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&k| {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = axis
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(1.0);
            if lead < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axis
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let dot = |a: &[f64]| row.iter().zip(a).map(|(r, v)| r * v).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect())
}

pub fn project_latents(model: &Model, samples: &[Sample]) -> Result<Vec<ProjectedPoint>> {
    let latents = samples
        .iter()
        .map(|s| model.encode(&s.x))
        .collect::<Result<Vec<_>>>()?;
    let coords = pca_2d(&latents)?;
    Ok(coords
        .into_iter()
        .zip(samples)
        .map(|([pc1, pc2], s)| ProjectedPoint {
            pc1,
            pc2,
            class_label: s.class_label,
            domain_role: s.domain_role,
        })
        .collect())
}

/// Writes `pc1,pc2,class_label,domain_role` rows for every sample.
pub fn dump_latent_projection(model: &Model, samples: &[Sample], out: &Path) -> Result<Vec<ProjectedPoint>> {
    let points = project_latents(model, samples)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pc1", "pc2", "class_label", "domain_role"])?;
    for p in &points {
        w.write_record([
            p.pc1.to_string(),
            p.pc2.to_string(),
            p.class_label.to_string(),
            p.domain_role.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(out, &bytes)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_too_few_points() {
        assert!(pca_2d(&[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn two_dimensional_input_is_rotated_only() {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.7;
                vec![t.cos() * 2.0 + 0.3, t.sin() * 0.5 - 1.0]
            })
            .collect();
        let proj = pca_2d(&pts).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let d1 = ((proj[i][0] - proj[j][0]).powi(2) + (proj[i][1] - proj[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn first_axis_carries_most_variance() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i % 3) as f64 * 0.1, 0.0])
            .collect();
        let proj = pca_2d(&pts).unwrap();
        let var = |k: usize| proj.iter().map(|p| p[k] * p[k]).sum::<f64>();
        assert!(var(0) > var(1));
    }
}
