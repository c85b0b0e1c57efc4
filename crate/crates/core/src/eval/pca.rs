//! Principal component projection on z-scored features.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::features::{FeatureVector, Fingerprint};

/// Fitted projection.
///
/// Input columns with zero training variance are dropped before the
/// decomposition; their indices are kept in `dropped_columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub input_dim: usize,
    /// Indices of the input columns that survive standardization.
    pub kept_columns: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    /// Training mean of each kept column.
    pub mean: Vec<f64>,
    /// Training standard deviation (population) of each kept column.
    pub scale: Vec<f64>,
    /// `output_dim` unit-length rows over the kept columns.
    pub components: Vec<Vec<f64>>,
    /// All eigenvalues of the standardized covariance, descending.
    pub eigenvalues: Vec<f64>,
    pub requested_fraction: f64,
    pub retained_fraction: f64,
    pub output_dim: usize,
    pub source: Fingerprint,
}

impl PcaProjection {
    pub fn flagged(&self) -> bool {
        !self.dropped_columns.is_empty()
    }

    /// Fingerprint attached to projected vectors: derived from the source
    /// registry and the projection shape, so a model trained on projected
    /// features cannot be fed raw ones.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of_text(&format!(
            "pca-projection v1\nsource {}\ninput {}\noutput {}\n",
            self.source, self.input_dim, self.output_dim
        ))
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        self.kept_columns
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&c, (m, s))| (x[c] - m) / s)
            .collect()
    }

    /// Standardized-space reconstruction of `x` from its projection.
    pub fn reconstruct_standardized(&self, x: &[f64]) -> Vec<f64> {
        let z = pca_apply_slice(self, x);
        let mut out = vec![0.0; self.kept_columns.len()];
        for (row, &coef) in self.components.iter().zip(&z) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += coef * r;
            }
        }
        out
    }

    pub fn standardized(&self, x: &[f64]) -> Vec<f64> {
        self.standardize(x)
    }
}

pub fn pca_fit(rows: &[Vec<f64>], variance_fraction: f64, source: Fingerprint) -> Result<PcaProjection, EvalError> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(EvalError::Pca(format!("variance fraction must be in (0, 1], got {variance_fraction}")));
    }
    if rows.len() < 2 {
        return Err(EvalError::Pca(format!("need at least 2 samples, got {}", rows.len())));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(EvalError::Pca("rows have different lengths".into()));
    }
    let n = rows.len() as f64;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut mean = Vec::new();
    let mut scale = Vec::new();
    for c in 0..dim {
        let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 * m.abs().max(1.0) && sd.is_finite() {
            kept.push(c);
            mean.push(m);
            scale.push(sd);
        } else {
            dropped.push(c);
        }
    }
    if !dropped.is_empty() {
        log::warn!("pca: dropped {} zero-variance column(s)", dropped.len());
    }
    if kept.is_empty() {
        return Err(EvalError::Pca("every column has zero variance".into()));
    }
    let p = kept.len();
    let mut proj = PcaProjection {
        input_dim: dim,
        kept_columns: kept,
        dropped_columns: dropped,
        mean,
        scale,
        components: Vec::new(),
        eigenvalues: Vec::new(),
        requested_fraction: variance_fraction,
        retained_fraction: 0.0,
        output_dim: 0,
        source,
    };
    let z = DMatrix::from_fn(rows.len(), p, |i, j| {
        let c = proj.kept_columns[j];
        (rows[i][c] - proj.mean[j]) / proj.scale[j]
    });
    let cov = (z.transpose() * &z) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    let mut d = p;
    for (k, v) in values.iter().enumerate() {
        acc += v;
        // small slack so that fraction = 1.0 is reachable despite rounding
        if acc >= variance_fraction * total * (1.0 - 1e-12) {
            d = k + 1;
            break;
        }
    }
    proj.components = order[..d]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    proj.retained_fraction = values[..d].iter().sum::<f64>() / total;
    proj.eigenvalues = values;
    proj.output_dim = d;
    Ok(proj)
}

pub(crate) fn pca_apply_slice(proj: &PcaProjection, x: &[f64]) -> Vec<f64> {
    let z = proj.standardize(x);
    proj.components
        .iter()
        .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn pca_apply(proj: &PcaProjection, x: &FeatureVector<f64>) -> Result<FeatureVector<f64>, EvalError> {
    if x.len() != proj.input_dim {
        return Err(EvalError::Pca(format!("expected {} features, got {}", proj.input_dim, x.len())));
    }
    if x.fingerprint != proj.source {
        return Err(EvalError::Pca(format!(
            "projection fitted on registry {}, vector from {}",
            proj.source.short(),
            x.fingerprint.short()
        )));
    }
    Ok(FeatureVector {
        values: pca_apply_slice(proj, &x.values),
        fingerprint: proj.fingerprint(),
        flagged: x.flagged,
    })
}
