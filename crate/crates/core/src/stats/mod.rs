//! Nonparametric comparison of conditions.
//!
//! The battery runs, in order: a Kolmogorov-Smirnov normality check per
//! condition, a Friedman test across all conditions, then every pairwise
//! Wilcoxon signed-rank test at a Bonferroni-corrected threshold.

mod compare;
mod friedman;
mod ks;
mod wilcoxon;

pub use compare::{compare_conditions, AnalysisReport, ReportEntry, TestKind, TestOutcome};
pub use friedman::friedman;
pub use ks::{kolmogorov_survival, ks_normality};
pub use wilcoxon::{signed_rank_counts, wilcoxon_signed_rank, EXACT_MAX_N};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    /// D for KS, chi-square for Friedman, Z for Wilcoxon.
    pub statistic: f64,
    pub p_value: f64,
    /// Samples (KS), blocks (Friedman) or nonzero pairs (Wilcoxon).
    pub n: usize,
    pub significant: bool,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, n: usize, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult {
            statistic,
            p_value,
            n,
            significant: p_value < alpha,
        }
    }
}

/// Blocks (rows) by treatments (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedData {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl PairedData {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = labels.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Shape(format!("block {i} has {} values, expected {k}", row.len())));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("block {i}, treatment {:?} is not finite", labels[j])));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Shape(format!("duplicate treatment label {l:?}")));
            }
        }
        Ok(PairedData { labels, rows })
    }

    /// Build from one column per treatment.
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() {
            return Err(Error::Shape(format!("{} labels for {} columns", labels.len(), columns.len())));
        }
        let n = columns.first().map_or(0, Vec::len);
        if let Some((j, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::Shape(format!(
                "treatment {:?} has {} blocks, expected {n}",
                labels[j],
                c.len()
            )));
        }
        let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::new(labels, rows)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn blocks(&self) -> usize {
        self.rows.len()
    }

    pub fn treatments(&self) -> usize {
        self.labels.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Per-comparison threshold for `m` comparisons.
pub fn bonferroni(alpha_family: f64, m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::Arity { expected: 1, got: 0 });
    }
    if !(alpha_family > 0.0 && alpha_family <= 1.0) {
        return Err(Error::Config(format!("family alpha must lie in (0, 1], got {alpha_family}")));
    }
    Ok(alpha_family / m as f64)
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
/// Also returns the size of every tie group of two or more.
pub(crate) fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i+1 ..= j share rank (i + 1 + j) / 2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}
