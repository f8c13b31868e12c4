//! Paired Wilcoxon signed-rank test, two-sided.
//!
//! Differences within `1e-9 * max|input|` of zero are dropped and absolute
//! differences within the same tolerance share their average rank. Up to
//! [`EXACT_MAX_N`] nonzero pairs the p-value is exact (the null distribution of
//! the positive rank sum is counted over all `2^n` sign patterns); beyond it a
//! normal approximation with tie and continuity correction is used.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub const EXACT_MAX_N: usize = 12;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRank {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `values` sorted ascending, grouping values
/// within `tol`.
fn average_ranks(values: &[f64], tol: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] - values[order[end - 1]] <= tol {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn signed_rank(x: &[f64], y: &[f64]) -> Result<SignedRank> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let scale = x.iter().chain(y).fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-9 * scale;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| d.abs() > tol).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(SignedRank {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p_value: 1.0,
            exact: true,
        });
    }
    if n < MIN_PAIRS {
        return Err(Error::Invalid(format!(
            "{n} nonzero differences; the signed-rank test needs at least {MIN_PAIRS}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs, tol);
    let w_plus = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let exact = n <= EXACT_MAX_N;
    let p_value = if exact {
        exact_p(&ranks, statistic)
    } else {
        normal_p(&ranks, statistic)
    };
    Ok(SignedRank {
        statistic,
        w_plus,
        w_minus,
        n,
        p_value,
        exact,
    })
}

/// Fraction of sign patterns whose `min(S, T - S)` is at most the observed
/// statistic. Works on doubled ranks, which are integers even with ties.
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let observed = (2.0 * statistic).round() as usize;
    // counts[s] = number of subsets with doubled rank sum s
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| s.min(total - s) <= observed)
        .map(|(_, c)| c)
        .sum();
    hits as f64 / (1u64 << ranks.len()) as f64
}

fn normal_p(ranks: &[f64], statistic: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((statistic - mean + 0.5) / var.sqrt()).min(0.0);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.cdf(z)).min(1.0)
}
