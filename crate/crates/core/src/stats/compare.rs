use std::fmt::Write as _;
use std::io::Write;

use super::{bonferroni, friedman, ks_normality, wilcoxon_signed_rank, PairedData, TestResult};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestKind {
    KsNormality,
    Friedman,
    Wilcoxon,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::KsNormality => "ks_normality",
            TestKind::Friedman => "friedman",
            TestKind::Wilcoxon => "wilcoxon",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TestOutcome {
    Done(TestResult),
    /// The test could not run on this data; counts as non-significant.
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportEntry {
    pub kind: TestKind,
    pub condition_a: String,
    pub condition_b: Option<String>,
    pub alpha_used: f64,
    pub outcome: TestOutcome,
}

impl ReportEntry {
    pub fn result(&self) -> Option<&TestResult> {
        match &self.outcome {
            TestOutcome::Done(r) => Some(r),
            TestOutcome::Skipped(_) => None,
        }
    }

    pub fn significant(&self) -> bool {
        self.result().is_some_and(|r| r.significant)
    }

    fn note(&self) -> &str {
        match &self.outcome {
            TestOutcome::Done(_) => "",
            TestOutcome::Skipped(why) => why,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub family_alpha: f64,
    pub per_comparison_alpha: f64,
    pub entries: Vec<ReportEntry>,
}

impl AnalysisReport {
    pub fn of_kind(&self, kind: TestKind) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn friedman(&self) -> Option<&TestResult> {
        self.of_kind(TestKind::Friedman).next().and_then(ReportEntry::result)
    }

    pub const CSV_HEADER: [&'static str; 8] =
        ["test", "condition_a", "condition_b", "statistic", "p", "alpha_used", "significant", "note"];

    /// Rows matching [`Self::CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<[String; 8]> {
        self.entries
            .iter()
            .map(|e| {
                let (stat, p) = match e.result() {
                    Some(r) => (r.statistic.to_string(), r.p_value.to_string()),
                    None => (String::new(), String::new()),
                };
                [
                    e.kind.as_str().to_string(),
                    e.condition_a.clone(),
                    e.condition_b.clone().unwrap_or_default(),
                    stat,
                    p,
                    e.alpha_used.to_string(),
                    e.significant().to_string(),
                    e.note().to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for row in self.csv_rows() {
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "family alpha {:.4}, per-comparison threshold {:.4}",
            self.family_alpha, self.per_comparison_alpha
        );
        let _ = writeln!(
            s,
            "{:<13} {:<24} {:>12} {:>12} {:>8} {:>4}",
            "test", "conditions", "statistic", "p", "alpha", "sig"
        );
        for e in &self.entries {
            let cond = match &e.condition_b {
                Some(b) => format!("{} vs {}", e.condition_a, b),
                None => e.condition_a.clone(),
            };
            let (stat, p) = match e.result() {
                Some(r) => (format!("{:.4}", r.statistic), format!("{:.4e}", r.p_value)),
                None => ("-".to_string(), "-".to_string()),
            };
            let _ = write!(
                s,
                "{:<13} {:<24} {:>12} {:>12} {:>8.4} {:>4}",
                e.kind.as_str(),
                cond,
                stat,
                p,
                e.alpha_used,
                if e.significant() { "yes" } else { "no" }
            );
            if !e.note().is_empty() {
                let _ = write!(s, "  ({})", e.note());
            }
            s.push('\n');
        }
        s
    }
}

/// KS normality per condition, Friedman across conditions, then every
/// pairwise signed-rank test at `alpha / m` with `m = k (k - 1) / 2`.
///
/// KS and pairwise tests that cannot run (too few nonzero pairs, zero
/// variance) are kept as skipped entries. A Friedman failure aborts.
pub fn compare_conditions(data: &PairedData, alpha: f64) -> Result<AnalysisReport> {
    let k = data.treatments();
    let m = k * k.saturating_sub(1) / 2;
    let per = bonferroni(alpha, m.max(1))?;
    let labels = data.labels();
    let columns: Vec<Vec<f64>> = (0..k).map(|j| data.column(j)).collect();
    let mut entries = Vec::with_capacity(k + 1 + m);

    for (label, col) in labels.iter().zip(&columns) {
        let outcome = match ks_normality(col, alpha) {
            Ok(r) => TestOutcome::Done(r),
            Err(e @ (Error::InsufficientData(_) | Error::Degenerate(_))) => TestOutcome::Skipped(e.to_string()),
            Err(e) => return Err(stage("normality", e)),
        };
        entries.push(ReportEntry {
            kind: TestKind::KsNormality,
            condition_a: label.clone(),
            condition_b: None,
            alpha_used: alpha,
            outcome,
        });
    }

    let fr = friedman(data, alpha).map_err(|e| stage("friedman", e))?;
    entries.push(ReportEntry {
        kind: TestKind::Friedman,
        condition_a: labels.join("|"),
        condition_b: None,
        alpha_used: alpha,
        outcome: TestOutcome::Done(fr),
    });

    for a in 0..k {
        for b in a + 1..k {
            let outcome = match wilcoxon_signed_rank(&columns[a], &columns[b], per) {
                Ok(r) => TestOutcome::Done(r),
                Err(e @ (Error::InsufficientData(_) | Error::Degenerate(_))) => TestOutcome::Skipped(e.to_string()),
                Err(e) => return Err(stage("wilcoxon", e)),
            };
            entries.push(ReportEntry {
                kind: TestKind::Wilcoxon,
                condition_a: labels[a].clone(),
                condition_b: Some(labels[b].clone()),
                alpha_used: per,
                outcome,
            });
        }
    }

    Ok(AnalysisReport {
        family_alpha: alpha,
        per_comparison_alpha: per,
        entries,
    })
}

fn stage(name: &str, e: Error) -> Error {
    Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    }
}
