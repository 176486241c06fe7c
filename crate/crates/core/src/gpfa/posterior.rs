use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::kernel::gp_kernel;
use super::GpfaModel;
use crate::error::{Error, Result};
use crate::linalg::spd_inverse_logdet;
#[cfg(test)]
use crate::linalg::spd_logdet;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smoothed latent trajectory of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// T×p posterior mean.
    pub mean: DMatrix<f64>,
    /// p×p posterior covariance at each timestep.
    pub cov: Vec<DMatrix<f64>>,
}

/// Model quantities shared by every trial length.
pub(crate) struct ModelTerms {
    pub rinv: DVector<f64>,
    /// C^T R^-1 C.
    pub g: DMatrix<f64>,
    pub logdet_r: f64,
}

impl ModelTerms {
    pub fn new(model: &GpfaModel) -> Self {
        let rinv = model.r.map(|v| 1.0 / v);
        let rinv_c = DMatrix::from_fn(model.c.nrows(), model.c.ncols(), |k, j| model.c[(k, j)] * rinv[k]);
        Self {
            g: model.c.tr_mul(&rinv_c),
            logdet_r: model.r.iter().map(|v| v.ln()).sum(),
            rinv,
        }
    }
}

/// Posterior covariance and determinants for one trial length; they do not
/// depend on the observations.
pub(crate) struct LengthFactor {
    pub t_len: usize,
    /// Tp×Tp latent-major posterior covariance.
    pub cov: DMatrix<f64>,
    pub logdet_m: f64,
    pub logdet_k: f64,
}

impl LengthFactor {
    pub fn new(model: &GpfaModel, terms: &ModelTerms, t_len: usize) -> Result<Self> {
        let p = model.latent_dim();
        let dim = t_len * p;
        let mut precision = DMatrix::zeros(dim, dim);
        let mut logdet_k = 0.0;
        for i in 0..p {
            let k = gp_kernel(model.tau[i], model.sigma_n2, t_len);
            let (k_inv, ld) = spd_inverse_logdet(&k, "GP kernel")?;
            logdet_k += ld;
            precision
                .view_mut((i * t_len, i * t_len), (t_len, t_len))
                .copy_from(&k_inv);
        }
        for i in 0..p {
            for j in 0..p {
                let gij = terms.g[(i, j)];
                for t in 0..t_len {
                    precision[(i * t_len + t, j * t_len + t)] += gij;
                }
            }
        }
        let (cov, logdet_m) = spd_inverse_logdet(&precision, "latent posterior precision")?;
        Ok(Self {
            t_len,
            cov,
            logdet_m,
            logdet_k,
        })
    }

    /// Posterior covariance block between latent `i` and `j` at one timestep.
    pub fn block_at(&self, p: usize, t: usize) -> DMatrix<f64> {
        let tl = self.t_len;
        DMatrix::from_fn(p, p, |i, j| self.cov[(i * tl + t, j * tl + t)])
    }
}

/// Latent-major posterior mean of one trial and its log marginal likelihood.
pub(crate) fn trial_posterior(
    model: &GpfaModel,
    terms: &ModelTerms,
    factor: &LengthFactor,
    y: &DMatrix<f64>,
) -> (DVector<f64>, f64) {
    let (t_len, q) = y.shape();
    let p = model.latent_dim();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &model.d.transpose();
    }
    let mut weighted = centered.clone();
    let mut quad = 0.0;
    for k in 0..q {
        for t in 0..t_len {
            let v = centered[(t, k)];
            quad += v * v * terms.rinv[k];
            weighted[(t, k)] = v * terms.rinv[k];
        }
    }
    let b_mat = &weighted * &model.c; // T×p
    let b = DVector::from_fn(t_len * p, |idx, _| b_mat[(idx % t_len, idx / t_len)]);
    let mu = &factor.cov * &b;
    let loglik = -0.5
        * ((t_len * q) as f64 * LN_2PI
            + t_len as f64 * terms.logdet_r
            + factor.logdet_k
            + factor.logdet_m
            + quad
            - b.dot(&mu));
    (mu, loglik)
}

pub(crate) fn check_trial(model: &GpfaModel, y: &DMatrix<f64>) -> Result<()> {
    if y.ncols() != model.observed_dim() {
        return Err(Error::Shape(format!(
            "trial has {} columns, model expects {}",
            y.ncols(),
            model.observed_dim()
        )));
    }
    if y.nrows() == 0 {
        return Err(Error::Shape("trial has no timesteps".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trial observations".into()));
    }
    Ok(())
}

/// Groups trial indices by length, in ascending length order.
pub(crate) fn group_by_length(trials: &[DMatrix<f64>]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, y) in trials.iter().enumerate() {
        groups.entry(y.nrows()).or_default().push(i);
    }
    groups
}

/// Exact smoothing posterior of the stacked latent trajectory.
pub fn infer(model: &GpfaModel, trial: &DMatrix<f64>) -> Result<Posterior> {
    model.validate()?;
    check_trial(model, trial)?;
    let terms = ModelTerms::new(model);
    let t_len = trial.nrows();
    let p = model.latent_dim();
    let factor = LengthFactor::new(model, &terms, t_len)?;
    let (mu, _) = trial_posterior(model, &terms, &factor, trial);
    Ok(Posterior {
        mean: DMatrix::from_fn(t_len, p, |t, i| mu[i * t_len + t]),
        cov: (0..t_len).map(|t| factor.block_at(p, t)).collect(),
    })
}

/// Sum over trials of the log marginal density of each stacked observation
/// vector.
pub fn log_likelihood(model: &GpfaModel, trials: &[DMatrix<f64>]) -> Result<f64> {
    model.validate()?;
    for y in trials {
        check_trial(model, y)?;
    }
    let terms = ModelTerms::new(model);
    let mut total = 0.0;
    for (t_len, members) in group_by_length(trials) {
        let factor = LengthFactor::new(model, &terms, t_len)?;
        for i in members {
            total += trial_posterior(model, &terms, &factor, &trials[i]).1;
        }
    }
    Ok(total)
}

#[cfg(test)]
/// Log density of N(mean, cov) at x, by Cholesky. Used for small dense checks.
pub(crate) fn dense_gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("dense covariance".into()))?;
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let logdet = spd_logdet(cov, "dense covariance")?;
    Ok(-0.5 * (x.len() as f64 * LN_2PI + logdet + diff.dot(&sol)))
}
