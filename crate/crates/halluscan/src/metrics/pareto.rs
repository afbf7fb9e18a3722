//! Cost-quality Pareto frontier over detection configurations.

use serde::{Deserialize, Serialize};

/// One configuration as a point in cost-quality space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    /// Forward passes per response.
    pub cost: f64,
    /// Detection quality (pooled AUROC).
    pub quality: f64,
}

/// True when `other` is at least as cheap and at least as good, and strictly
/// better on one axis. Duplicate points do not dominate each other.
#[must_use]
pub fn dominates(other: &ParetoPoint, point: &ParetoPoint) -> bool {
    other.cost <= point.cost
        && other.quality >= point.quality
        && (other.cost < point.cost || other.quality > point.quality)
}

/// Non-dominated points, sorted by cost ascending (quality descending, then
/// label, on ties). Every excluded input point is dominated by some output
/// point.
#[must_use]
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut frontier: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|o| dominates(o, p)))
        .cloned()
        .collect();
    frontier.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .expect("finite costs")
            .then(b.quality.partial_cmp(&a.quality).expect("finite qualities"))
            .then(a.label.cmp(&b.label))
    });
    frontier
}
