use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mixgen::GenerationRecord;
use crate::relabel::RelabelRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRelabelCount {
    pub generated: usize,
    pub relabeled: usize,
}

/// Share of generations whose resolved label differs from the class they
/// were generated for, keyed by that intended class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelabelStats {
    pub per_class_counts: BTreeMap<String, ClassRelabelCount>,
    pub total_generated: usize,
    pub total_relabeled: usize,
    pub percent_relabeled: f64,
}

impl RelabelStats {
    /// Builds the statistics from `(intended, resolved)` label pairs.
    pub fn from_labels<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut stats = Self::default();
        for (intended, resolved) in pairs {
            let entry = stats.per_class_counts.entry(intended.to_string()).or_default();
            entry.generated += 1;
            stats.total_generated += 1;
            if intended != resolved {
                entry.relabeled += 1;
                stats.total_relabeled += 1;
            }
        }
        if stats.total_generated > 0 {
            stats.percent_relabeled =
                100.0 * stats.total_relabeled as f64 / stats.total_generated as f64;
        }
        stats
    }

    pub fn from_relabels(records: &[RelabelRecord]) -> Self {
        Self::from_labels(
            records
                .iter()
                .map(|r| (r.intended_label.as_str(), r.resolved_label.as_str())),
        )
    }
}

/// Relabel statistics over paired generation and relabel records.
pub fn compute_relabel_stats(records: &[(GenerationRecord, RelabelRecord)]) -> RelabelStats {
    RelabelStats::from_labels(
        records
            .iter()
            .map(|(g, r)| (g.intended_label.as_str(), r.resolved_label.as_str())),
    )
}

impl fmt::Display for RelabelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .per_class_counts
            .keys()
            .map(String::len)
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        writeln!(f, "{:<width$}  {:>9}  {:>9}  {:>7}", "class", "generated", "relabeled", "percent")?;
        for (class, c) in &self.per_class_counts {
            let pct = if c.generated > 0 {
                100.0 * c.relabeled as f64 / c.generated as f64
            } else {
                0.0
            };
            writeln!(f, "{class:<width$}  {:>9}  {:>9}  {pct:>7.1}", c.generated, c.relabeled)?;
        }
        write!(
            f,
            "{:<width$}  {:>9}  {:>9}  {:>7.1}",
            "total", self.total_generated, self.total_relabeled, self.percent_relabeled
        )
    }
}
