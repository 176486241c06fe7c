use serde::{Deserialize, Serialize};

use super::gaussian::KlMatrix;
use crate::datamodel::ConditionLabel;
use crate::error::{Error, Result};

/// Largest combined sample size for which the exact null distribution is
/// enumerated.
const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MwuMethod {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "normal-approx-tie-corrected")]
    NormalApproxTieCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// U of sample A: its rank sum minus n_a(n_a+1)/2, with midranks for ties.
    pub u_statistic: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Two-sided.
    pub p_value: f64,
    pub method: MwuMethod,
}

/// Midranks (1-based) of the concatenation of `a` and `b`, plus the tie
/// group sizes and whether any tie spans both samples.
fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>, bool) {
    let all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| all[i].0.total_cmp(&all[j].0));
    let mut ranks = vec![0.0; all.len()];
    let mut ties = Vec::new();
    let mut cross = false;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && all[order[end]].0 == all[order[start]].0 {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        let first_side = all[order[start]].1;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
            cross |= all[idx].1 != first_side;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties, cross)
}

/// Number of arrangements giving each U value, for sample sizes (m, n) with
/// no ties. Index = U.
fn exact_u_counts(m: usize, n: usize) -> Vec<f64> {
    // counts[i][j][u] over i <= m, j <= n, built up one element at a time.
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                // The largest element belongs to A (adds j to U) or to B.
                let from_a = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

fn normal_two_sided(u: f64, n_a: usize, n_b: usize, ties: &[usize]) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let mu = na * nb / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

pub fn mwu_test(sample_a: &[f64], sample_b: &[f64]) -> Result<MwuResult> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mann-Whitney sample".into()));
    }
    let (n_a, n_b) = (sample_a.len(), sample_b.len());
    let (ranks, ties, cross_ties) = midranks(sample_a, sample_b);
    let rank_sum_a: f64 = ranks[..n_a].iter().sum();
    let u = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;

    if n_a + n_b <= EXACT_MAX_N && !cross_ties {
        let counts = exact_u_counts(n_a, n_b);
        let total: f64 = counts.iter().sum();
        let u_idx = u.round() as usize;
        let lower: f64 = counts[..=u_idx].iter().sum();
        let upper: f64 = counts[u_idx..].iter().sum();
        let p = (2.0 * lower.min(upper) / total).min(1.0);
        return Ok(MwuResult {
            u_statistic: u,
            n_a,
            n_b,
            p_value: p,
            method: MwuMethod::Exact,
        });
    }
    Ok(MwuResult {
        u_statistic: u,
        n_a,
        n_b,
        p_value: normal_two_sided(u, n_a, n_b, &ties),
        method: MwuMethod::NormalApproxTieCorrected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSeparation {
    pub test: MwuResult,
    /// Mean KL over ordered pairs of conditions sharing a style.
    pub within_mean: f64,
    /// Mean KL over ordered pairs of conditions with different styles.
    pub across_mean: f64,
}

/// Tests whether same-style KL divergences are smaller than cross-style ones.
pub fn style_separation_test(m: &KlMatrix, labels: &[ConditionLabel]) -> Result<StyleSeparation> {
    let n = labels.len();
    if m.values.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "KL matrix is {}x{} but {n} labels were given",
            m.values.nrows(),
            m.values.ncols()
        )));
    }
    let mut within = Vec::new();
    let mut across = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i].style_id == labels[j].style_id {
                within.push(m.values[(i, j)]);
            } else {
                across.push(m.values[(i, j)]);
            }
        }
    }
    if within.is_empty() {
        return Err(Error::GroupEmpty("no pair of conditions shares a style".into()));
    }
    if across.is_empty() {
        return Err(Error::GroupEmpty("all conditions share one style".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(StyleSeparation {
        test: mwu_test(&within, &across)?,
        within_mean: mean(&within),
        across_mean: mean(&across),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn two_by_two_separated() {
        let r = mwu_test(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.method, MwuMethod::Exact);
        assert_eq!(r.p_value, 1.0 / 3.0);
    }

    #[test]
    fn identical_samples() {
        let r = mwu_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u_statistic, 4.5);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, MwuMethod::NormalApproxTieCorrected);
    }

    #[test]
    fn shift_invariance() {
        let a = [0.3, 1.7, 2.2, 5.0];
        let b = [1.1, 4.4, 0.9, 3.3, 6.0];
        let r = mwu_test(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v + 100.0).collect();
        let sb: Vec<f64> = b.iter().map(|v| v + 100.0).collect();
        assert_eq!(r, mwu_test(&sa, &sb).unwrap());
    }

    #[test]
    fn empty_and_non_finite() {
        assert!(matches!(mwu_test(&[], &[1.0]), Err(Error::EmptySample)));
        assert!(mwu_test(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn counts_sum_to_binomial() {
        let c = exact_u_counts(10, 10);
        assert_eq!(c.iter().sum::<f64>(), 184_756.0);
        assert_eq!(c.len(), 101);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 1.0);
        assert_eq!(c[2], 2.0);
    }

    fn grid(styles: u32, texts: u32, same: f64, cross: f64) -> (KlMatrix, Vec<ConditionLabel>) {
        let labels: Vec<ConditionLabel> = (0..styles)
            .flat_map(|s| {
                (0..texts).map(move |t| ConditionLabel {
                    style_id: s,
                    text_id: t,
                    seed: 0,
                })
            })
            .collect();
        let n = labels.len();
        let values = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else if labels[i].style_id == labels[j].style_id {
                same
            } else {
                cross
            }
        });
        let names = (0..n).map(|i| format!("c{i}")).collect();
        (KlMatrix { labels: names, values }, labels)
    }

    #[test]
    fn separated_grid_is_significant() {
        let (m, labels) = grid(5, 3, 1.0, 9.0);
        let r = style_separation_test(&m, &labels).unwrap();
        assert!(r.test.p_value < 0.001, "{}", r.test.p_value);
        assert_eq!(r.test.n_a, 30);
        assert_eq!(r.test.n_b, 180);
        assert_eq!((r.within_mean, r.across_mean), (1.0, 9.0));
    }

    #[test]
    fn flat_grid_is_not_significant() {
        let (m, labels) = grid(5, 3, 2.0, 2.0);
        assert_eq!(style_separation_test(&m, &labels).unwrap().test.p_value, 1.0);
    }

    #[test]
    fn single_style_has_an_empty_group() {
        let (m, labels) = grid(1, 3, 1.0, 9.0);
        let err = style_separation_test(&m, &labels).unwrap_err();
        assert!(err.to_string().contains("a group empty"), "{err}");
    }

    #[test]
    fn condition_order_does_not_matter() {
        let (m, labels) = grid(3, 2, 1.0, 9.0);
        let mut vals = m.values.clone();
        vals[(0, 2)] = 4.0;
        vals[(1, 0)] = 0.5;
        let m = KlMatrix { labels: m.labels, values: vals };
        let perm = [4, 2, 0, 5, 1, 3];
        let n = perm.len();
        let pm = KlMatrix {
            labels: perm.iter().map(|&i| m.labels[i].clone()).collect(),
            values: DMatrix::from_fn(n, n, |i, j| m.values[(perm[i], perm[j])]),
        };
        let pl: Vec<ConditionLabel> = perm.iter().map(|&i| labels[i].clone()).collect();
        assert_eq!(
            style_separation_test(&m, &labels).unwrap(),
            style_separation_test(&pm, &pl).unwrap()
        );
    }
}
