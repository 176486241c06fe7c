//! GPFA checked against dense joint-Gaussian computations and synthetic data
//! with a known generator.

use nalgebra::{DMatrix, DVector};
use neurotraj::analysis::principal_angles;
use neurotraj::gpfa::{self, GpfaModel, GpfaOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn kernel(tau: f64, sn2: f64, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |a, b| {
        let d = a as f64 - b as f64;
        let delta = if a == b { sn2 } else { 0.0 };
        (1.0 - sn2) * (-d * d / (2.0 * tau * tau)).exp() + delta
    })
}

fn random_model(rng: &mut ChaCha8Rng, q: usize, p: usize) -> GpfaModel {
    GpfaModel {
        c: DMatrix::from_fn(q, p, |_, _| rng.gen_range(-1.5..1.5)),
        d: DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0)),
        r: DVector::from_fn(q, |_, _| rng.gen_range(0.1..0.8)),
        tau: DVector::from_fn(p, |_, _| rng.gen_range(0.8..4.0)),
        sigma_n2: 1e-3,
    }
}

/// Joint covariance blocks with x indexed (t, i) -> t*p + i and y indexed
/// (t, k) -> t*q + k.
fn joint_blocks(m: &GpfaModel, t_len: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (q, p) = m.c.shape();
    let mut sxx = DMatrix::zeros(t_len * p, t_len * p);
    for i in 0..p {
        let k = kernel(m.tau[i], m.sigma_n2, t_len);
        for a in 0..t_len {
            for b in 0..t_len {
                sxx[(a * p + i, b * p + i)] = k[(a, b)];
            }
        }
    }
    let mut cbar = DMatrix::zeros(t_len * q, t_len * p);
    let mut rbar = DMatrix::zeros(t_len * q, t_len * q);
    let mut dbar = DVector::zeros(t_len * q);
    for t in 0..t_len {
        cbar.view_mut((t * q, t * p), (q, p)).copy_from(&m.c);
        for k in 0..q {
            rbar[(t * q + k, t * q + k)] = m.r[k];
            dbar[t * q + k] = m.d[k];
        }
    }
    let syx = &cbar * &sxx;
    let syy = &syx * cbar.transpose() + rbar;
    (sxx, syx, syy, dbar)
}

fn stack_rows(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(y.len(), y.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let diff = x - mean;
    let det = cov.determinant();
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + (diff.transpose() * inv * &diff)[(0, 0)])
}

#[test]
fn infer_matches_brute_force_conditional() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t_len, q, p) = (3, 2, 1);
    let m = random_model(&mut rng, q, p);
    let y = DMatrix::from_fn(t_len, q, |_, _| rng.gen_range(-2.0..2.0));
    let (sxx, syx, syy, dbar) = joint_blocks(&m, t_len);
    let syy_inv = syy.try_inverse().unwrap();
    let gain = syx.transpose() * &syy_inv;
    let mean = &gain * (stack_rows(&y) - dbar);
    let cov = &sxx - &gain * &syx;

    let post = gpfa::infer(&m, &y).unwrap();
    for t in 0..t_len {
        for i in 0..p {
            assert!((post.mean[(t, i)] - mean[t * p + i]).abs() < 1e-8);
            for j in 0..p {
                assert!((post.cov[t][(i, j)] - cov[(t * p + i, t * p + j)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn infer_matches_brute_force_with_two_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (t_len, q, p) = (5, 4, 2);
    let m = random_model(&mut rng, q, p);
    let y = DMatrix::from_fn(t_len, q, |_, _| rng.gen_range(-2.0..2.0));
    let (sxx, syx, syy, dbar) = joint_blocks(&m, t_len);
    let gain = syx.transpose() * syy.try_inverse().unwrap();
    let mean = &gain * (stack_rows(&y) - dbar);
    let cov = &sxx - &gain * &syx;
    let post = gpfa::infer(&m, &y).unwrap();
    for t in 0..t_len {
        for i in 0..p {
            assert!((post.mean[(t, i)] - mean[t * p + i]).abs() < 1e-8);
            for j in 0..p {
                assert!((post.cov[t][(i, j)] - cov[(t * p + i, t * p + j)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn log_likelihood_matches_dense_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (t_len, q, p) = (4, 3, 2);
    let m = random_model(&mut rng, q, p);
    let y = DMatrix::from_fn(t_len, q, |_, _| rng.gen_range(-2.0..2.0));
    let (_, _, syy, dbar) = joint_blocks(&m, t_len);
    let direct = mvn_logpdf(&stack_rows(&y), &dbar, &syy);
    let ll = gpfa::log_likelihood(&m, &[y.clone()]).unwrap();
    assert!((ll - direct).abs() < 1e-8, "{ll} vs {direct}");

    let y2 = DMatrix::from_fn(6, q, |_, _| rng.gen_range(-2.0..2.0));
    let (_, _, syy2, dbar2) = joint_blocks(&m, 6);
    let direct2 = mvn_logpdf(&stack_rows(&y2), &dbar2, &syy2);
    let both = gpfa::log_likelihood(&m, &[y, y2]).unwrap();
    assert!((both - direct - direct2).abs() < 1e-8);
}

/// Draws trials from a GPFA generator; returns trials and true latents.
fn sample_gpfa(
    rng: &mut ChaCha8Rng,
    c: &DMatrix<f64>,
    taus: &[f64],
    noise_sd: f64,
    t_len: usize,
    n_trials: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let p = c.ncols();
    let chols: Vec<DMatrix<f64>> = taus
        .iter()
        .map(|&tau| kernel(tau, 1e-3, t_len).cholesky().unwrap().unpack())
        .collect();
    let mut trials = Vec::new();
    let mut latents = Vec::new();
    for _ in 0..n_trials {
        let mut x = DMatrix::zeros(t_len, p);
        for i in 0..p {
            let z = DVector::from_fn(t_len, |_, _| StandardNormal.sample(&mut *rng));
            x.set_column(i, &(&chols[i] * z));
        }
        let mut y = &x * c.transpose();
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut *rng);
            *v += 0.5 + noise_sd * e;
        }
        trials.push(y);
        latents.push(x);
    }
    (trials, latents)
}

#[test]
fn em_is_monotone_and_recovers_subspace() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (q, p) = (20, 3);
    let c_true = DMatrix::from_fn(q, p, |_, _| rng.gen_range(-1.0..1.0));
    let (trials, _) = sample_gpfa(&mut rng, &c_true, &[4.0, 8.0, 15.0], 0.3, 50, 40);
    let opts = GpfaOptions {
        seed: 5,
        ..GpfaOptions::default()
    };
    let (model, report) = gpfa::fit(&trials, p, &opts).unwrap();
    assert!(report.iterations >= 2);
    for w in report.loglik_per_iter.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
    }
    let angles = principal_angles(&model.c, &c_true).unwrap();
    let angle = angles.last().unwrap().to_degrees();
    assert!(angle < 10.0, "largest principal angle {angle} degrees");
}

#[test]
fn em_recovers_timescale_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let q = 12;
    let c_true = DMatrix::from_fn(q, 2, |_, _| rng.gen_range(-1.0..1.0));
    let (trials, latents) = sample_gpfa(&mut rng, &c_true, &[25.0, 3.0], 0.3, 60, 30);
    let (model, _) = gpfa::fit(&trials, 2, &GpfaOptions::default()).unwrap();
    // Match each fitted latent to the true latent it tracks most closely.
    let post: Vec<DMatrix<f64>> = trials.iter().map(|y| gpfa::infer(&model, y).unwrap().mean).collect();
    let est = DMatrix::from_rows(&post.iter().flat_map(|m| m.row_iter().map(|r| r.into_owned()).collect::<Vec<_>>()).collect::<Vec<_>>());
    let truth = DMatrix::from_rows(&latents.iter().flat_map(|m| m.row_iter().map(|r| r.into_owned()).collect::<Vec<_>>()).collect::<Vec<_>>());
    let corr = |a: usize, b: usize| {
        let x = est.column(a).into_owned() - DVector::from_element(est.nrows(), est.column(a).mean());
        let y = truth.column(b).into_owned() - DVector::from_element(truth.nrows(), truth.column(b).mean());
        (x.dot(&y) / (x.norm() * y.norm())).abs()
    };
    let slow_fit = if corr(0, 0) * corr(1, 1) >= corr(0, 1) * corr(1, 0) { 0 } else { 1 };
    let fast_fit = 1 - slow_fit;
    assert!(
        model.tau[slow_fit] > model.tau[fast_fit],
        "taus {:?}",
        model.tau.as_slice()
    );
}

#[test]
fn fit_is_deterministic_for_fixed_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let c_true = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
    let (trials, _) = sample_gpfa(&mut rng, &c_true, &[3.0, 6.0], 0.3, 20, 6);
    let opts = GpfaOptions {
        max_iter: 15,
        seed: 9,
        ..GpfaOptions::default()
    };
    let a = gpfa::fit(&trials, 2, &opts).unwrap();
    let b = gpfa::fit(&trials, 2, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn project_returns_top_three_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let m = random_model(&mut rng, 6, 4);
    let y = DMatrix::from_fn(7, 6, |_, _| rng.gen_range(-1.0..1.0));
    let out = gpfa::project(&m, &y, 3).unwrap();
    assert_eq!(out.shape(), (7, 3));
    let full = gpfa::project(&m, &y, 4).unwrap();
    assert_eq!(full.columns(0, 3), out.columns(0, 3));
}
