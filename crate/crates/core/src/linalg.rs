use faer::linalg::solvers::DenseSolveCore;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub(crate) fn spd_inverse_logdet(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let llt = fm
        .llt(faer::Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite(what.to_string()))?;
    let l = llt.L();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let inv = llt.inverse();
    Ok((DMatrix::from_fn(n, n, |i, j| inv[(i, j)]), logdet))
}

/// Log-determinant via Cholesky (nalgebra; for small matrices).
pub(crate) fn spd_logdet(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_logdet_of_small_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let (inv, logdet) = spd_inverse_logdet(&m, "m").unwrap();
        assert!((logdet - 8f64.ln()).abs() < 1e-14);
        assert!(((&m * &inv) - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!((spd_logdet(&m, "m").unwrap() - logdet).abs() < 1e-14);
        assert!(spd_inverse_logdet(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), "bad").is_err());
    }
}
