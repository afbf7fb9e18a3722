//! Cross-domain threshold transfer: fit an F1-optimal threshold on each
//! source domain, apply it to every target domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{f1_at, fit_f1_threshold, ScoredSet};

/// One (source, target) cell of the transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub source: String,
    pub target: String,
    /// Threshold fit on the full source set; `None` (UNDEFINED) for a
    /// single-class source, in which case 0.5 was applied.
    pub threshold: Option<f64>,
    pub f1: f64,
}

/// Square matrix of transfer cells in row-major (source-major) order, with
/// domains sorted lexicographically. The diagonal is in-domain performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub domains: Vec<String>,
    pub cells: Vec<TransferCell>,
}

impl TransferMatrix {
    /// Looks up a cell by source and target names.
    #[must_use]
    pub fn cell(&self, source: &str, target: &str) -> Option<&TransferCell> {
        self.cells.iter().find(|c| c.source == source && c.target == target)
    }
}

/// Fits the F1-optimal `score >= t` threshold on each source domain's full
/// set (sweeping unique source scores, ties toward the lower threshold) and
/// reports the F1 of that fixed classifier on every target domain.
/// Single-class targets score through the standard formula, which yields 0
/// whenever no true positive is possible.
///
/// Panics with fewer than two domains.
#[must_use]
pub fn transfer_matrix(per_domain: &BTreeMap<String, ScoredSet>) -> TransferMatrix {
    assert!(per_domain.len() >= 2, "transfer needs at least two domains");
    let domains: Vec<String> = per_domain.keys().cloned().collect();
    let mut cells = Vec::with_capacity(domains.len() * domains.len());
    for source in &domains {
        let threshold = fit_f1_threshold(&per_domain[source]);
        let applied = threshold.unwrap_or(0.5);
        for target in &domains {
            let (f1, _, _) = f1_at(&per_domain[target], applied);
            cells.push(TransferCell {
                source: source.clone(),
                target: target.clone(),
                threshold,
                f1,
            });
        }
    }
    TransferMatrix { domains, cells }
}
