use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::attention::clamped_exp;
use super::PenStep;

/// Bound on the end-of-stroke logit; keeps `e` strictly inside (0, 1).
const E_LOGIT_CLAMP: f64 = 30.0;
/// Bound on the correlation pre-activation; keeps |rho| < 1.
const RHO_CLAMP: f64 = 10.0;
/// Lower bound on log sigma, keeping sigma > 0.
const LOG_SIGMA_FLOOR: f64 = -50.0;
/// Densities below this are treated as this value inside the log.
const DENSITY_FLOOR: f64 = 1e-300;

/// Mixture of bivariate Gaussians over (dx, dy) plus a Bernoulli pen-up.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub e: f64,
    pub pi: Vec<f64>,
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
}

impl MixtureParams {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    /// log N((dx, dy); mu_j, sigma_j, rho_j) plus the standardized offsets.
    fn component_log_density(&self, j: usize, dx: f64, dy: f64) -> (f64, f64, f64) {
        let [s1, s2] = self.sigma[j];
        let rho = self.rho[j];
        let z1 = (dx - self.mu[j][0]) / s1;
        let z2 = (dy - self.mu[j][1]) / s2;
        let one_m = 1.0 - rho * rho;
        let quad = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2;
        let log_n = -(2.0 * std::f64::consts::PI * s1 * s2).ln() - 0.5 * one_m.ln() - quad / (2.0 * one_m);
        (log_n, z1, z2)
    }
}

fn clamp_raw(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    if x < lo {
        (lo, 0.0)
    } else if x > hi {
        (hi, 0.0)
    } else {
        (x, 1.0)
    }
}

/// Layout of a raw output vector of length 1 + 6M:
/// `[e_hat, pi_hat(M), mu_x(M), mu_y(M), log_sigma_x(M), log_sigma_y(M), rho_hat(M)]`.
pub fn mdn_params(raw: &[f64]) -> MixtureParams {
    let m = (raw.len() - 1) / 6;
    let (e_hat, _) = clamp_raw(raw[0], -E_LOGIT_CLAMP, E_LOGIT_CLAMP);
    let e = super::lstm::sigmoid(e_hat);
    let logits = &raw[1..1 + m];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let pi = exps.iter().map(|v| v / total).collect();
    let mut mu = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    let mut rho = Vec::with_capacity(m);
    for j in 0..m {
        mu.push([raw[1 + m + j], raw[1 + 2 * m + j]]);
        let s1 = clamped_exp(raw[1 + 3 * m + j].max(LOG_SIGMA_FLOOR)).0;
        let s2 = clamped_exp(raw[1 + 4 * m + j].max(LOG_SIGMA_FLOOR)).0;
        sigma.push([s1, s2]);
        rho.push(clamp_raw(raw[1 + 5 * m + j], -RHO_CLAMP, RHO_CLAMP).0.tanh());
    }
    MixtureParams {
        e,
        pi,
        mu,
        sigma,
        rho,
    }
}

fn log_mixture(params: &MixtureParams, dx: f64, dy: f64) -> (f64, Vec<f64>, Vec<(f64, f64)>) {
    let m = params.components();
    let mut terms = Vec::with_capacity(m);
    let mut zs = Vec::with_capacity(m);
    for j in 0..m {
        let (log_n, z1, z2) = params.component_log_density(j, dx, dy);
        terms.push(params.pi[j].ln() + log_n);
        zs.push((z1, z2));
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    let log_p = max + sum.ln();
    (log_p, terms, zs)
}

/// Negative log-likelihood of one pen step under the mixture.
pub fn mdn_nll(params: &MixtureParams, target: &PenStep) -> f64 {
    let (log_p, _, _) = log_mixture(params, target.dx, target.dy);
    let log_p = if log_p.is_nan() { f64::NEG_INFINITY } else { log_p };
    let bern = if target.pen_up { params.e } else { 1.0 - params.e };
    -log_p.max(DENSITY_FLOOR.ln()) - bern.max(DENSITY_FLOOR).ln()
}

/// NLL and its gradient with respect to the raw output vector.
pub fn mdn_nll_grad(raw: &[f64], target: &PenStep) -> (f64, Vec<f64>) {
    let m = (raw.len() - 1) / 6;
    let params = mdn_params(raw);
    let nll = mdn_nll(&params, target);
    let mut grad = vec![0.0; raw.len()];

    let x3 = if target.pen_up { 1.0 } else { 0.0 };
    let (_, e_active) = clamp_raw(raw[0], -E_LOGIT_CLAMP, E_LOGIT_CLAMP);
    grad[0] = (params.e - x3) * e_active;

    let (log_p, terms, zs) = log_mixture(&params, target.dx, target.dy);
    if !(log_p > DENSITY_FLOOR.ln()) {
        // Floor is active: the mixture term is locally constant.
        return (nll, grad);
    }
    for j in 0..m {
        let gamma = (terms[j] - log_p).exp();
        let (z1, z2) = zs[j];
        let [s1, s2] = params.sigma[j];
        let rho = params.rho[j];
        let one_m = 1.0 - rho * rho;
        let quad = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2;
        grad[1 + j] = params.pi[j] - gamma;
        grad[1 + m + j] = -gamma * (z1 - rho * z2) / (s1 * one_m);
        grad[1 + 2 * m + j] = -gamma * (z2 - rho * z1) / (s2 * one_m);
        let ls1 = raw[1 + 3 * m + j];
        let ls2 = raw[1 + 4 * m + j];
        let act1 = if (LOG_SIGMA_FLOOR..=super::attention::EXP_CLAMP).contains(&ls1) { 1.0 } else { 0.0 };
        let act2 = if (LOG_SIGMA_FLOOR..=super::attention::EXP_CLAMP).contains(&ls2) { 1.0 } else { 0.0 };
        grad[1 + 3 * m + j] = -gamma * (z1 * (z1 - rho * z2) / one_m - 1.0) * act1;
        grad[1 + 4 * m + j] = -gamma * (z2 * (z2 - rho * z1) / one_m - 1.0) * act2;
        let (_, rho_active) = clamp_raw(raw[1 + 5 * m + j], -RHO_CLAMP, RHO_CLAMP);
        grad[1 + 5 * m + j] = -gamma * (rho + z1 * z2 - rho * quad / one_m) * rho_active;
    }
    (nll, grad)
}

/// Draws the next pen step from the mixture (temperature 1, no bias).
pub fn sample_pen_step<R: Rng>(params: &MixtureParams, rng: &mut R) -> PenStep {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut j = params.components() - 1;
    for (k, p) in params.pi.iter().enumerate() {
        acc += p;
        if u < acc {
            j = k;
            break;
        }
    }
    let n1: f64 = StandardNormal.sample(rng);
    let n2: f64 = StandardNormal.sample(rng);
    let [s1, s2] = params.sigma[j];
    let rho = params.rho[j];
    let dx = params.mu[j][0] + s1 * n1;
    let dy = params.mu[j][1] + s2 * (rho * n1 + (1.0 - rho * rho).sqrt() * n2);
    let pen_up = rng.gen::<f64>() < params.e;
    PenStep::new(dx, dy, pen_up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_raw_vector_transforms() {
        let p = mdn_params(&[0.0; 13]);
        assert_eq!(p.e, 0.5);
        assert_eq!(p.pi, vec![0.5, 0.5]);
        assert!(p.sigma.iter().all(|s| s == &[1.0, 1.0]));
        assert!(p.rho.iter().all(|r| *r == 0.0));
        assert!(p.mu.iter().all(|m| m == &[0.0, 0.0]));
    }

    #[test]
    fn softmax_arithmetic() {
        let mut raw = vec![0.0; 13];
        raw[1] = 3f64.ln();
        let p = mdn_params(&raw);
        assert!((p.pi[0] - 0.75).abs() < 1e-12);
        assert!((p.pi[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn standard_bivariate_nll() {
        let p = mdn_params(&[0.0; 7]);
        let expect = (2.0 * std::f64::consts::PI).ln() + 2f64.ln();
        assert!((expect - 2.531024).abs() < 1e-6);
        let down = mdn_nll(&p, &PenStep::new(0.0, 0.0, false));
        let up = mdn_nll(&p, &PenStep::new(0.0, 0.0, true));
        assert!((down - expect).abs() < 1e-9);
        assert!((up - expect).abs() < 1e-9);
    }

    /// Frozen values computed with 50-digit arithmetic (mpmath) directly from
    /// the product-form density, without log-sum-exp.
    #[test]
    fn matches_high_precision_oracle() {
        let cases: [(&[f64], PenStep, f64); 3] = [
            (
                &[0.3, 0.2, -0.7, 0.5, -1.0, 0.1, 0.4, -0.2, 0.3, 0.6, -0.8, 1.2, -0.4],
                PenStep { dx: 0.25, dy: -0.6, pen_up: false },
                MPMATH_CASE_0,
            ),
            (
                &[-1.5, 1.0, 0.0, 2.0, -0.5, 0.0, 0.0, 0.0, 0.0, -2.0, 0.5, 0.7, -0.3],
                PenStep { dx: 1.7, dy: 0.2, pen_up: true },
                MPMATH_CASE_1,
            ),
            (
                &[2.0, 0.0, 0.3, -0.3, 1.0, 0.1, -0.9],
                PenStep { dx: -2.0, dy: 3.0, pen_up: false },
                MPMATH_CASE_2,
            ),
        ];
        for (raw, target, expect) in cases {
            let nll = mdn_nll(&mdn_params(raw), &target);
            assert!((nll - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{nll} vs {expect}");
        }
    }

    const MPMATH_CASE_0: f64 = 2.8614206757215219592;
    const MPMATH_CASE_1: f64 = 3.8238574935909063894;
    const MPMATH_CASE_2: f64 = 10.878979757829612625;

    #[test]
    fn gradient_matches_finite_differences() {
        let raw = [0.3, 0.2, -0.7, 0.5, -1.0, 0.1, 0.4, -0.2, 0.3, 0.6, -0.8, 1.2, -0.4];
        for target in [PenStep::new(0.25, -0.6, false), PenStep::new(-1.0, 0.9, true)] {
            let (_, grad) = mdn_nll_grad(&raw, &target);
            for i in 0..raw.len() {
                let h = 1e-6;
                let mut plus = raw;
                let mut minus = raw;
                plus[i] += h;
                minus[i] -= h;
                let fd = (mdn_nll(&mdn_params(&plus), &target) - mdn_nll(&mdn_params(&minus), &target)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-7, "component {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn params_are_always_valid(raw in proptest::collection::vec(-1e4f64..1e4, 13)) {
            let p = mdn_params(&raw);
            prop_assert!(p.e > 0.0 && p.e < 1.0);
            let total: f64 = p.pi.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.pi.iter().all(|v| *v >= 0.0));
            prop_assert!(p.sigma.iter().all(|s| s[0] > 0.0 && s[1] > 0.0 && s[0].is_finite() && s[1].is_finite()));
            prop_assert!(p.rho.iter().all(|r| r.abs() < 1.0));
            let nll = mdn_nll(&p, &PenStep::new(raw[0], raw[1], raw[2] > 0.0));
            prop_assert!(nll.is_finite());
        }
    }
}
