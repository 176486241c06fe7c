use nalgebra::DMatrix;

/// Squared-exponential GP covariance over timesteps `0..t_len` with signal
/// variance `1 - sigma_n2` and innovation variance `sigma_n2`.
pub fn gp_kernel(tau: f64, sigma_n2: f64, t_len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t_len, t_len, |a, b| {
        if a == b {
            1.0
        } else {
            let diff = a as f64 - b as f64;
            (1.0 - sigma_n2) * (-diff * diff / (2.0 * tau * tau)).exp()
        }
    })
}

/// Derivative of the kernel with respect to log tau.
pub(crate) fn gp_kernel_dlog_tau(tau: f64, sigma_n2: f64, t_len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t_len, t_len, |a, b| {
        let diff = a as f64 - b as f64;
        let r2 = diff * diff / (tau * tau);
        (1.0 - sigma_n2) * (-r2 / 2.0).exp() * r2
    })
}
