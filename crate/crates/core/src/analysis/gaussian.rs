use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_logdet;

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Gaussian fitted to all timesteps of a condition's trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionDistribution {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_points: usize,
}

impl ConditionDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_condition_gaussian(trajs: &[DMatrix<f64>], ridge: f64) -> Result<ConditionDistribution> {
    let k = trajs.first().map_or(0, |m| m.ncols());
    if k == 0 {
        return Err(Error::EmptyInput("no trajectory columns".into()));
    }
    if let Some(bad) = trajs.iter().find(|m| m.ncols() != k) {
        return Err(Error::Shape(format!(
            "trajectory has {} columns, expected {k}",
            bad.ncols()
        )));
    }
    let n: usize = trajs.iter().map(|m| m.nrows()).sum();
    if n < k + 1 {
        return Err(Error::TooFewPoints { have: n, need: k + 1 });
    }
    let mut mean = DVector::zeros(k);
    for m in trajs {
        for row in m.row_iter() {
            mean += row.transpose();
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(k, k);
    for m in trajs {
        for row in m.row_iter() {
            let d = row.transpose() - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
    }
    cov /= (n - 1) as f64;
    for i in 0..k {
        cov[(i, i)] += ridge;
    }
    Ok(ConditionDistribution {
        mean,
        cov,
        n_points: n,
    })
}

/// KL(a || b) between two Gaussians.
pub fn kl_gaussian(a: &ConditionDistribution, b: &ConditionDistribution) -> Result<f64> {
    let k = a.dim();
    if b.dim() != k || a.cov.shape() != (k, k) || b.cov.shape() != (k, k) {
        return Err(Error::Shape(format!(
            "distributions of dimension {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let chol_b = b
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("condition covariance".into()))?;
    let trace = chol_b.solve(&a.cov).trace();
    let diff = &b.mean - &a.mean;
    let maha = diff.dot(&chol_b.solve(&diff));
    let logdet_b = spd_logdet(&b.cov, "condition covariance")?;
    let logdet_a = spd_logdet(&a.cov, "condition covariance")?;
    Ok((0.5 * (trace + maha - k as f64 + logdet_b - logdet_a)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    /// KL(row || column).
    #[default]
    Directed,
    /// KL(a||b) + KL(b||a).
    Jeffreys,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlMatrix {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn kl_matrix(conditions: &[(String, ConditionDistribution)], mode: KlMode) -> Result<KlMatrix> {
    let m = conditions.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "KL matrix needs at least 2 conditions, got {m}"
        )));
    }
    let mut values = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let forward = kl_gaussian(&conditions[i].1, &conditions[j].1)?;
            values[(i, j)] = match mode {
                KlMode::Directed => forward,
                KlMode::Jeffreys => forward + kl_gaussian(&conditions[j].1, &conditions[i].1)?,
            };
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KL matrix".into()));
    }
    Ok(KlMatrix {
        labels: conditions.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}
