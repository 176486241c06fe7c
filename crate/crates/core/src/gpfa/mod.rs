//! Gaussian-process factor analysis.
//!
//! Observations follow `y_t = C x_t + d + e_t` with `e_t ~ N(0, diag(R))`;
//! each latent dimension `i` is an independent GP over timesteps with kernel
//! `(1 - sigma_n2) exp(-(t1-t2)^2 / (2 tau_i^2)) + sigma_n2 delta(t1, t2)`.
//! Latent vectors are stacked latent-major (`index = i * T + t`) whenever the
//! full trajectory is handled jointly.

mod em;
mod fa;
mod kernel;
mod orth;
mod posterior;

pub use em::fit;
pub use fa::factor_analysis;
pub use kernel::gp_kernel;
pub use orth::{orthonormalize, project, OrthTrajectory, Orthonormalizer};
pub use posterior::{infer, log_likelihood, Posterior};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorfile::TensorFile;

pub const DEFAULT_SIGMA_N2: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GpfaModel {
    /// Loading matrix, q×p.
    pub c: DMatrix<f64>,
    /// Offset, length q.
    pub d: DVector<f64>,
    /// Diagonal observation noise variances, length q.
    pub r: DVector<f64>,
    /// GP timescales in timesteps, length p.
    pub tau: DVector<f64>,
    pub sigma_n2: f64,
}

impl GpfaModel {
    pub fn observed_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (q, p) = self.c.shape();
        if self.d.len() != q || self.r.len() != q || self.tau.len() != p {
            return Err(Error::Shape(format!(
                "model with C {q}x{p} has d {}, R {}, tau {}",
                self.d.len(),
                self.r.len(),
                self.tau.len()
            )));
        }
        if self.r.iter().any(|v| !(*v > 0.0)) || self.tau.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "R and tau must be strictly positive".into(),
            ));
        }
        if !(self.sigma_n2 > 0.0 && self.sigma_n2 < 1.0) {
            return Err(Error::InvalidArgument("sigma_n2 must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.push_meta("kind", "gpfa-model");
        f.push("C", &self.c);
        f.push_vec("d", self.d.as_slice());
        f.push_vec("R", self.r.as_slice());
        f.push_vec("tau", self.tau.as_slice());
        f.push_vec("sigma_n2", &[self.sigma_n2]);
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let c = f.tensor("C")?.clone();
        let (q, p) = c.shape();
        let model = Self {
            d: f.tensor_shaped("d", q, 1)?.column(0).into_owned(),
            r: f.tensor_shaped("R", q, 1)?.column(0).into_owned(),
            tau: f.tensor_shaped("tau", p, 1)?.column(0).into_owned(),
            sigma_n2: f.tensor_shaped("sigma_n2", 1, 1)?[(0, 0)],
            c,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpfaOptions {
    pub max_iter: usize,
    /// Stop when the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub seed: u64,
    pub sigma_n2: f64,
    pub init_tau: f64,
    /// Iterations of static factor analysis used for initialization.
    pub fa_iters: usize,
    /// Lower bound on each R_k as a fraction of that unit's pooled variance.
    pub min_var_frac: f64,
    /// When nonzero, EM runs on overlapping windows of this many timesteps
    /// cut from each longer trial, so only a few kernel sizes occur.
    pub seg_length: usize,
}

impl Default for GpfaOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
            sigma_n2: DEFAULT_SIGMA_N2,
            init_tau: 20.0,
            fa_iters: 50,
            min_var_frac: 0.01,
            seg_length: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loglik_per_iter: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trip() {
        let model = GpfaModel {
            c: DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.25, 2.0, 0.1, 0.0]),
            d: DVector::from_vec(vec![0.1, 0.2, 0.3]),
            r: DVector::from_vec(vec![0.5, 0.25, 1.0]),
            tau: DVector::from_vec(vec![3.0, 17.5]),
            sigma_n2: 1e-3,
        };
        let text = model.to_tensor_file().to_text();
        let back = GpfaModel::from_tensor_file(&TensorFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
