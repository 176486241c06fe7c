use nalgebra::{DMatrix, DVector};

use super::posterior::infer;
use super::GpfaModel;
use crate::error::{Error, Result};

/// Latent trajectory re-expressed in the orthonormal basis of the loading
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthTrajectory {
    /// T×p, dimensions ordered by singular value descending.
    pub values: DMatrix<f64>,
    pub singular_values: DVector<f64>,
}

/// Economy SVD of the loading matrix, `C = U S V^T`, with singular values in
/// descending order. Each column of `U` is signed so that its largest-magnitude
/// entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthonormalizer {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Orthonormalizer {
    pub fn new(c: &DMatrix<f64>) -> Self {
        let (q, p) = c.shape();
        let svd = c.clone().svd(true, true);
        let u_raw = svd.u.expect("u requested");
        let vt_raw = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut u = DMatrix::zeros(q, p);
        let mut v = DMatrix::zeros(p, p);
        let mut s = DVector::zeros(p);
        for (dst, &src) in order.iter().enumerate() {
            let mut ucol = u_raw.column(src).into_owned();
            let mut vcol = vt_raw.row(src).transpose();
            let pivot = ucol.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                ucol.neg_mut();
                vcol.neg_mut();
            }
            u.set_column(dst, &ucol);
            v.set_column(dst, &vcol);
            s[dst] = svd.singular_values[src];
        }
        Self { u, s, v }
    }

    /// Maps a T×p latent trajectory to `x~_t = S V^T x_t`.
    pub fn apply(&self, mean: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = mean * &self.v;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.s[j];
        }
        out
    }
}

pub fn orthonormalize(model: &GpfaModel, posterior_mean: &DMatrix<f64>) -> OrthTrajectory {
    let orth = Orthonormalizer::new(&model.c);
    OrthTrajectory {
        values: orth.apply(posterior_mean),
        singular_values: orth.s,
    }
}

/// Posterior mean of `trial`, orthonormalized, truncated to the top `k`
/// dimensions.
pub fn project(model: &GpfaModel, trial: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let p = model.latent_dim();
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!(
            "projection dimension {k} must lie in 1..={p}"
        )));
    }
    let post = infer(model, trial)?;
    let orth = orthonormalize(model, &post.mean);
    Ok(orth.values.columns(0, k).into_owned())
}
