use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{average_ranks, PairedData, TestResult};
use crate::{Error, Result};

/// Friedman rank test across the treatments of `data`.
///
/// Ranks within each block (ties averaged), then
/// `chi2 = (12 / (n k (k+1)) * sum_j R_j^2 - 3 n (k+1)) / C` where `R_j` is
/// the rank sum of treatment `j` and `C = 1 - sum(t^3 - t) / (n (k^3 - k))`
/// corrects for ties. `p` is the upper tail of chi-square with `k - 1`
/// degrees of freedom. Fully tied data gives `chi2 = 0`, `p = 1`.
pub fn friedman(data: &PairedData, alpha: f64) -> Result<TestResult> {
    let n = data.blocks();
    let k = data.treatments();
    if k < 2 {
        return Err(Error::Shape(format!("Friedman needs at least 2 treatments, got {k}")));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("Friedman needs at least 2 blocks, got {n}")));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in data.rows() {
        let (ranks, ties) = average_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        tie_term += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Ok(TestResult::new(0.0, 1.0, n, alpha));
    }
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    // Multiply before dividing so integral cases stay exact.
    let raw = 12.0 * sum_sq / (nf * kf * (kf + 1.0)) - 3.0 * nf * (kf + 1.0);
    let chi2 = (raw / correction).max(0.0);
    let dist = ChiSquared::new(kf - 1.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(TestResult::new(chi2, 1.0 - dist.cdf(chi2), n, alpha))
}
