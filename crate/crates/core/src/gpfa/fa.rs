use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::spd_logdet;

/// Static factor analysis by EM on the rows of `data` (n×q).
///
/// Returns (C, d, R). The loading starts from a seeded Gaussian draw scaled to
/// the geometric-mean variance of the data; R is floored at
/// `min_var_frac * var`.
pub fn factor_analysis(
    data: &DMatrix<f64>,
    p: usize,
    iters: usize,
    seed: u64,
    min_var_frac: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let (n, q) = data.shape();
    if n < 2 {
        return Err(Error::TooFewPoints { have: n, need: 2 });
    }
    let d = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &d.transpose();
    }
    let s = centered.tr_mul(&centered) / n as f64;
    let var = s.diagonal();
    let floor = &var * min_var_frac;

    let scale = (spd_logdet(&s, "data covariance")? / q as f64).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = DMatrix::from_fn(q, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * (scale / p as f64).sqrt()
    });
    let mut r = var.clone();
    let eye = DMatrix::<f64>::identity(p, p);

    for _ in 0..iters {
        let rinv_c = DMatrix::from_fn(q, p, |k, j| c[(k, j)] / r[k]);
        let m = &eye + c.tr_mul(&rinv_c);
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("factor analysis precision".into()))?;
        // beta = C^T (C C^T + R)^-1 via the Woodbury identity.
        let beta = &m_inv * rinv_c.transpose();
        let beta_s = &beta * &s;
        let ezz = &eye - &beta * &c + &beta_s * beta.transpose();
        let ezz_inv = ezz
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("factor analysis second moment".into()))?;
        c = beta_s.transpose() * ezz_inv;
        let cbs = &c * &beta_s;
        r = DVector::from_fn(q, |k, _| (s[(k, k)] - cbs[(k, k)]).max(floor[k]));
    }
    Ok((c, d, r))
}
