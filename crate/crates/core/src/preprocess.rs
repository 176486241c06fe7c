//! Median filtering of unit time series and removal of units that would make
//! the pooled observation covariance singular.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datamodel::TrialRecord;
use crate::error::{Error, Result};

pub const DEFAULT_VAR_FLOOR: f64 = 1e-10;
/// Singular values at or below this fraction of the largest do not count
/// toward the rank.
pub const RANK_RTOL: f64 = 1e-10;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub dropped_units: Vec<usize>,
    pub covariance_rank: usize,
    pub q_effective: usize,
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Size-3 running median with replicate padding at both ends.
pub fn median_filter3(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    (0..n)
        .map(|t| {
            let prev = series[t.saturating_sub(1)];
            let next = series[(t + 1).min(n - 1)];
            median3(prev, series[t], next)
        })
        .collect()
}

/// Applies [`median_filter3`] to every unit column.
pub fn filter_trial(trial: &TrialRecord) -> TrialRecord {
    let mut out = trial.clone();
    filter_columns(&mut out.activations);
    out
}

pub fn filter_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let filtered = median_filter3(col.as_slice());
        col.copy_from_slice(&filtered);
    }
}

/// Stacks the rows of several T_m×q matrices.
pub fn pool_rows<'a>(mats: impl IntoIterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let mats: Vec<&DMatrix<f64>> = mats.into_iter().collect();
    let q = mats.first().map_or(0, |m| m.ncols());
    let total: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(total, q);
    let mut row = 0;
    for m in mats {
        out.rows_mut(row, m.nrows()).copy_from(m);
        row += m.nrows();
    }
    out
}

/// Sample covariance (denominator n-1) of the rows of `data`.
pub fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.tr_mul(&centered) / (n.saturating_sub(1).max(1) as f64)
}

/// Numerical rank of a symmetric PSD matrix via singular values.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let largest = sv.max();
    if largest <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_RTOL * largest).count()
}

/// Drops units with pooled variance below `var_floor` and units that
/// duplicate a lower-indexed unit (|pooled correlation| = 1 within 1e-12).
pub fn drop_degenerate_units(
    trials: &[TrialRecord],
    var_floor: f64,
) -> Result<(Vec<TrialRecord>, PreprocessReport)> {
    let q = trials.first().map_or(0, |t| t.units());
    if let Some(bad) = trials.iter().find(|t| t.units() != q) {
        return Err(Error::Shape(format!(
            "trial {} has {} units, expected {q}",
            bad.id,
            bad.units()
        )));
    }
    let pooled = pool_rows(trials.iter().map(|t| &t.activations));
    let cov = sample_covariance(&pooled);

    let mut dropped = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for u in 0..q {
        let var = cov[(u, u)];
        if !(var >= var_floor) {
            dropped.push(u);
            continue;
        }
        let duplicate = kept.iter().any(|&k| {
            let corr = cov[(u, k)] / (var * cov[(k, k)]).sqrt();
            corr.abs() >= 1.0 - DUPLICATE_TOL
        });
        if duplicate {
            dropped.push(u);
        } else {
            kept.push(u);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoUsableUnits);
    }
    let reduced_cov = cov.select_rows(&kept).select_columns(&kept);
    let report = PreprocessReport {
        covariance_rank: numerical_rank(&reduced_cov),
        q_effective: kept.len(),
        dropped_units: dropped,
    };
    let out = trials
        .iter()
        .map(|t| TrialRecord {
            activations: t.activations.select_columns(&kept),
            ..t.clone()
        })
        .collect();
    Ok((out, report))
}

/// Keeps the given columns of a matrix; used to apply a fitted unit selection
/// to new trials.
pub fn select_units(m: &DMatrix<f64>, dropped: &[usize]) -> DMatrix<f64> {
    let kept: Vec<usize> = (0..m.ncols()).filter(|u| !dropped.contains(u)).collect();
    m.select_columns(&kept)
}
