use statrs::function::erf::erfc;

use super::{average_ranks, TestResult};
use crate::{Error, Result};

/// Largest number of nonzero pairs for which the p-value is computed exactly.
pub const EXACT_MAX_N: usize = 12;

/// Wilcoxon signed-rank test on paired samples `x[i]` vs `y[i]`.
///
/// Zero differences are dropped. The remaining `|d|` are ranked with ties
/// averaged. With `n <= EXACT_MAX_N` the two-sided p-value is exact: the
/// share of the `2^n` sign assignments whose `min(W+, W-)` is no larger
/// than the observed one. Above that the normal approximation is used,
/// with the usual tie correction to the variance.
///
/// The reported statistic is always the standardized `Z` of `W+`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alpha: f64) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("paired samples differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Shape("paired samples contain non-finite values".into()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 && !x.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 nonzero differences, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    // Averaged ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r) as u64).collect();
    let w_plus2: u64 = doubled.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = doubled.iter().sum();
    let w2 = w_plus2.min(total2 - w_plus2);

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
    let z = (w_plus2 as f64 / 2.0 - mean) / var.sqrt();

    let p = if n <= EXACT_MAX_N {
        let counts = signed_rank_counts(&doubled);
        let hits: u128 = counts
            .iter()
            .enumerate()
            .filter(|&(s, _)| (s as u64).min(total2 - s as u64) <= w2)
            .map(|(_, c)| c)
            .sum();
        hits as f64 / (1u128 << n) as f64
    } else {
        erfc(z.abs() / std::f64::consts::SQRT_2)
    };
    Ok(TestResult::new(z, p, n, alpha))
}

/// `counts[s]` is the number of subsets of `ranks` summing to `s`.
pub fn signed_rank_counts(ranks: &[u64]) -> Vec<u128> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}
