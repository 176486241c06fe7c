use nalgebra::{DMatrix, DVector};

use super::fa::factor_analysis;
use super::kernel::{gp_kernel, gp_kernel_dlog_tau};
use super::posterior::{check_trial, group_by_length, trial_posterior, LengthFactor, ModelTerms};
use super::{FitReport, GpfaModel, GpfaOptions};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse_logdet;
use crate::preprocess::{numerical_rank, pool_rows, sample_covariance};

const MAX_BACKTRACK: usize = 10;
const LOG_TAU_MIN: f64 = -std::f64::consts::LN_10;
const LOG_TAU_MAX: f64 = 9.210_340_371_976_184; // ln 1e4

/// Second-moment statistics of one latent for all trials of one length:
/// `sum_m E[x_i x_i^T]` over the T timesteps, and the trial count.
struct LatentMoments {
    t_len: usize,
    count: usize,
    second: DMatrix<f64>,
}

struct Expectations {
    loglik: f64,
    /// sum_t E[x_t x_t^T]
    sxx: DMatrix<f64>,
    /// sum_t E[x_t]
    sx: DVector<f64>,
    /// sum_t y_t E[x_t]^T
    syx: DMatrix<f64>,
    /// Per latent, per trial length.
    latent: Vec<Vec<LatentMoments>>,
}

fn e_step(model: &GpfaModel, trials: &[DMatrix<f64>]) -> Result<Expectations> {
    let (q, p) = model.c.shape();
    let terms = ModelTerms::new(model);
    let mut out = Expectations {
        loglik: 0.0,
        sxx: DMatrix::zeros(p, p),
        sx: DVector::zeros(p),
        syx: DMatrix::zeros(q, p),
        latent: (0..p).map(|_| Vec::new()).collect(),
    };
    for (t_len, members) in group_by_length(trials) {
        let factor = LengthFactor::new(model, &terms, t_len)?;
        let count = members.len();
        let mut block_sum = DMatrix::zeros(p, p);
        for t in 0..t_len {
            block_sum += factor.block_at(p, t);
        }
        out.sxx += block_sum * count as f64;
        let mut second: Vec<DMatrix<f64>> = (0..p)
            .map(|i| {
                factor
                    .cov
                    .view((i * t_len, i * t_len), (t_len, t_len))
                    .into_owned()
                    * count as f64
            })
            .collect();
        for &m in &members {
            let y = &trials[m];
            let (mu, ll) = trial_posterior(model, &terms, &factor, y);
            out.loglik += ll;
            let mean = DMatrix::from_fn(t_len, p, |t, i| mu[i * t_len + t]);
            out.sxx += mean.tr_mul(&mean);
            out.sx += mean.row_sum().transpose();
            out.syx += y.tr_mul(&mean);
            for (i, s) in second.iter_mut().enumerate() {
                let col = mean.column(i);
                s.ger(1.0, &col, &col, 1.0);
            }
        }
        for (i, s) in second.into_iter().enumerate() {
            out.latent[i].push(LatentMoments {
                t_len,
                count,
                second: s,
            });
        }
    }
    Ok(out)
}

/// Expected log GP prior of one latent (up to constants) and its derivative
/// with respect to log tau.
fn latent_prior_objective(
    log_tau: f64,
    sigma_n2: f64,
    moments: &[LatentMoments],
    with_grad: bool,
) -> Result<(f64, f64)> {
    let tau = log_tau.exp();
    let mut value = 0.0;
    let mut grad = 0.0;
    for m in moments {
        let k = gp_kernel(tau, sigma_n2, m.t_len);
        let (k_inv, logdet) = spd_inverse_logdet(&k, "GP kernel")?;
        let k_inv_s = &k_inv * &m.second;
        value += -0.5 * m.count as f64 * logdet - 0.5 * k_inv_s.trace();
        if with_grad {
            let a = &k_inv_s * &k_inv - &k_inv * m.count as f64;
            let dk = gp_kernel_dlog_tau(tau, sigma_n2, m.t_len);
            grad += 0.5 * a.component_mul(&dk).sum();
        }
    }
    Ok((value, grad))
}

/// One gradient-ascent step on log tau with backtracking; the step is kept
/// only if it raises the objective.
fn update_tau(tau: f64, sigma_n2: f64, moments: &[LatentMoments]) -> Result<f64> {
    let log_tau = tau.ln();
    let (f0, g) = latent_prior_objective(log_tau, sigma_n2, moments, true)?;
    if g == 0.0 || !g.is_finite() {
        return Ok(tau);
    }
    let steps: usize = moments.iter().map(|m| m.count * m.t_len).sum();
    let mut step = (2.0 * g / steps.max(1) as f64).clamp(-1.0, 1.0);
    for _ in 0..MAX_BACKTRACK {
        let candidate = (log_tau + step).clamp(LOG_TAU_MIN, LOG_TAU_MAX);
        if candidate != log_tau {
            let (f1, _) = latent_prior_objective(candidate, sigma_n2, moments, false)?;
            if f1 > f0 {
                return Ok(candidate.exp());
            }
        }
        step *= 0.5;
    }
    Ok(tau)
}

fn m_step(
    model: &GpfaModel,
    ex: &Expectations,
    sy: &DVector<f64>,
    syy_diag: &DVector<f64>,
    n_total: usize,
    floor: &DVector<f64>,
) -> Result<GpfaModel> {
    let (q, p) = model.c.shape();
    // Joint update of [C d] from the augmented latent [x; 1].
    let mut exx = DMatrix::zeros(p + 1, p + 1);
    exx.view_mut((0, 0), (p, p)).copy_from(&ex.sxx);
    exx.view_mut((0, p), (p, 1)).copy_from(&ex.sx);
    exx.view_mut((p, 0), (1, p)).copy_from(&ex.sx.transpose());
    exx[(p, p)] = n_total as f64;
    let mut syx = DMatrix::zeros(q, p + 1);
    syx.view_mut((0, 0), (q, p)).copy_from(&ex.syx);
    syx.set_column(p, sy);
    let chol = exx
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("latent second moment".into()))?;
    // C_aug = syx * exx^-1, solved as exx * C_aug^T = syx^T.
    let c_aug = chol.solve(&syx.transpose()).transpose();
    let r = DVector::from_fn(q, |k, _| {
        let explained: f64 = (0..=p).map(|j| c_aug[(k, j)] * syx[(k, j)]).sum();
        ((syy_diag[k] - explained) / n_total as f64).max(floor[k])
    });
    let mut tau = model.tau.clone();
    for i in 0..p {
        tau[i] = update_tau(model.tau[i], model.sigma_n2, &ex.latent[i])?;
    }
    Ok(GpfaModel {
        c: c_aug.columns(0, p).into_owned(),
        d: c_aug.column(p).into_owned(),
        r,
        tau,
        sigma_n2: model.sigma_n2,
    })
}

/// Cuts each trial longer than `seg_len` into `ceil(T / seg_len)` windows of
/// exactly `seg_len` rows with evenly spaced starts covering the whole trial.
pub(crate) fn cut_segments(trials: &[DMatrix<f64>], seg_len: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for y in trials {
        let t_len = y.nrows();
        if seg_len == 0 || t_len <= seg_len {
            out.push(y.clone());
            continue;
        }
        let n = t_len.div_ceil(seg_len);
        let span = t_len - seg_len;
        for i in 0..n {
            let start = (i * span + (n - 1) / 2) / (n - 1);
            out.push(y.rows(start, seg_len).into_owned());
        }
    }
    out
}

/// Fits GPFA by EM, starting from static factor analysis.
pub fn fit(trials: &[DMatrix<f64>], p: usize, opts: &GpfaOptions) -> Result<(GpfaModel, FitReport)> {
    let segmented;
    let trials = if opts.seg_length > 0 {
        segmented = cut_segments(trials, opts.seg_length);
        &segmented[..]
    } else {
        trials
    };
    if trials.is_empty() {
        return Err(Error::EmptyInput("no trials to fit".into()));
    }
    let q = trials[0].ncols();
    if p == 0 || p > q {
        return Err(Error::InvalidArgument(format!(
            "latent dimension {p} must lie in 1..={q}"
        )));
    }
    let pooled = pool_rows(trials);
    let n_total = pooled.nrows();
    let rank = numerical_rank(&sample_covariance(&pooled));
    if rank < q {
        return Err(Error::RankDeficient { rank, dim: q });
    }
    let (c, d, r) = factor_analysis(&pooled, p, opts.fa_iters, opts.seed, opts.min_var_frac)?;
    let mut model = GpfaModel {
        c,
        d,
        r,
        tau: DVector::from_element(p, opts.init_tau),
        sigma_n2: opts.sigma_n2,
    };
    model.validate()?;
    for y in trials {
        check_trial(&model, y)?;
    }

    let sy = pooled.row_sum().transpose();
    let syy_diag = DVector::from_fn(q, |k, _| pooled.column(k).norm_squared());
    let mean = &sy / n_total as f64;
    let floor = DVector::from_fn(q, |k, _| {
        (syy_diag[k] / n_total as f64 - mean[k] * mean[k]).max(0.0) * opts.min_var_frac
    });

    let mut report = FitReport {
        loglik_per_iter: Vec::new(),
        iterations: 0,
        converged: false,
    };
    for _ in 0..opts.max_iter {
        let ex = e_step(&model, trials)?;
        if !ex.loglik.is_finite() {
            return Err(Error::NonFinite("GPFA log likelihood".into()));
        }
        let prev = report.loglik_per_iter.last().copied();
        report.loglik_per_iter.push(ex.loglik);
        report.iterations += 1;
        if let Some(prev) = prev {
            if (ex.loglik - prev) / prev.abs() < opts.tol {
                report.converged = true;
                break;
            }
        }
        model = m_step(&model, &ex, &sy, &syy_diag, n_total, &floor)?;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tau_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let moments: Vec<LatentMoments> = [5usize, 8]
            .iter()
            .map(|&t| {
                let a = DMatrix::from_fn(t, t, |_, _| rng.gen_range(-1.0..1.0));
                LatentMoments {
                    t_len: t,
                    count: 3,
                    second: &a * a.transpose() + DMatrix::identity(t, t),
                }
            })
            .collect();
        let x: f64 = 1.3;
        let h = 1e-6;
        let (_, g) = latent_prior_objective(x, 1e-3, &moments, true).unwrap();
        let fp = latent_prior_objective(x + h, 1e-3, &moments, false).unwrap().0;
        let fm = latent_prior_objective(x - h, 1e-3, &moments, false).unwrap().0;
        assert!(((fp - fm) / (2.0 * h) - g).abs() < 1e-5 * g.abs().max(1.0));
    }

    #[test]
    fn segments_cover_each_trial() {
        let y = DMatrix::from_fn(47, 2, |t, k| (t * 2 + k) as f64);
        let segs = cut_segments(&[y.clone(), y.rows(0, 9).into_owned()], 10);
        assert_eq!(segs.len(), 6);
        assert!(segs.iter().take(5).all(|s| s.nrows() == 10));
        assert_eq!(segs[0][(0, 0)], 0.0);
        assert_eq!(segs[4][(9, 0)], 92.0);
        assert_eq!(segs[5].nrows(), 9);
    }

    #[test]
    fn rejects_bad_dimensions_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        assert!(fit(&[y.clone()], 4, &GpfaOptions::default()).is_err());
        let mut dup = y.clone();
        let c0 = dup.column(0).into_owned();
        dup.set_column(2, &c0);
        let err = fit(&[dup], 1, &GpfaOptions::default()).unwrap_err();
        assert!(err.to_string().contains("covariance rank deficiency"), "{err}");
    }
}
