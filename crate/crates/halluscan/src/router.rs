//! Adaptive detection routing: per-query risk scoring and budget-aware
//! selection among the self-evaluation, self-consistency, and entailment
//! scorers.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{CostTable, Method};
use crate::harness::Domain;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error(
        "risk thresholds must satisfy 0 <= medium < high <= 1, got medium {theta_med} / high {theta_high}"
    )]
    InvalidThresholds { theta_high: f64, theta_med: f64 },
    #[error("risk model training needs at least one example")]
    EmptyTrainingSet,
    #[error("risk model file {path}: {detail}")]
    ModelFile { path: String, detail: String },
}

/// Tokens counted as clause separators alongside commas.
pub const COORDINATING_CONJUNCTIONS: [&str; 7] =
    ["and", "but", "for", "nor", "or", "so", "yet"];

/// Deterministic per-query complexity proxies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteFeatures {
    pub query_token_count: usize,
    /// Commas plus coordinating-conjunction tokens in the query.
    pub clause_count_proxy: usize,
    /// Query tokens starting with an uppercase letter (entity proxy).
    pub capitalized_token_count: usize,
    /// Whether the query contains an ASCII digit.
    pub contains_digits: bool,
    pub response_token_count: usize,
    pub domain_onehot: [f64; 3],
}

pub const FEATURE_DIM: usize = 8;

/// Column names of [`RouteFeatures::vector`], recorded in model files.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "query_token_count",
    "clause_count_proxy",
    "capitalized_token_count",
    "contains_digits",
    "response_token_count",
    "domain_scientific",
    "domain_open_domain",
    "domain_commonsense",
];

impl RouteFeatures {
    /// Numeric design vector in [`FEATURE_NAMES`] order.
    #[must_use]
    pub fn vector(&self) -> [f64; FEATURE_DIM] {
        [
            self.query_token_count as f64,
            self.clause_count_proxy as f64,
            self.capitalized_token_count as f64,
            f64::from(u8::from(self.contains_digits)),
            self.response_token_count as f64,
            self.domain_onehot[0],
            self.domain_onehot[1],
            self.domain_onehot[2],
        ]
    }
}

/// Whitespace-token feature extraction. The complexity proxies are computed
/// over the query; the response contributes its token count. `_context` is
/// accepted for signature stability but the current feature set does not
/// use it.
#[must_use]
pub fn extract_features(
    query: &str,
    _context: Option<&str>,
    response: &str,
    domain: Domain,
) -> RouteFeatures {
    let tokens: Vec<&str> = query.split_whitespace().collect();
    let conjunctions = tokens
        .iter()
        .filter(|t| {
            let word: String =
                t.chars().filter(char::is_ascii_alphabetic).collect::<String>().to_lowercase();
            COORDINATING_CONJUNCTIONS.contains(&word.as_str())
        })
        .count();
    RouteFeatures {
        query_token_count: tokens.len(),
        clause_count_proxy: query.matches(',').count() + conjunctions,
        capitalized_token_count: tokens
            .iter()
            .filter(|t| t.chars().next().is_some_and(char::is_uppercase))
            .count(),
        contains_digits: query.chars().any(|c| c.is_ascii_digit()),
        response_token_count: response.split_whitespace().count(),
        domain_onehot: domain.onehot(),
    }
}

// ── risk model ─────────────────────────────────────────────────────────────

/// Full-batch gradient steps used by [`train_risk_model`].
pub const TRAINING_ITERATIONS: usize = 1000;
pub const TRAINING_LEARNING_RATE: f64 = 0.5;

/// A trained hallucination-risk scorer, serializable to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub seed: u64,
    pub sample_count: usize,
    pub feature_names: Vec<String>,
    pub kind: RiskModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskModelKind {
    /// Single-class training data: constant risk at training prevalence.
    Constant { p_risk: f64 },
    /// Logistic scorer over standardized features.
    Logistic { feature_means: Vec<f64>, feature_sds: Vec<f64>, bias: f64, weights: Vec<f64> },
}

impl RiskModel {
    /// Risk probability in [0, 1] for any feature vector.
    #[must_use]
    pub fn predict(&self, features: &RouteFeatures) -> f64 {
        match &self.kind {
            RiskModelKind::Constant { p_risk } => *p_risk,
            RiskModelKind::Logistic { feature_means, feature_sds, bias, weights } => {
                let x = features.vector();
                let mut z = *bias;
                for j in 0..FEATURE_DIM {
                    z += weights[j] * (x[j] - feature_means[j]) / feature_sds[j];
                }
                sigmoid(z)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RouterError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| RouterError::ModelFile { path: path.display().to_string(), detail: e.to_string() })?;
        std::fs::write(path, text + "\n")
            .map_err(|e| RouterError::ModelFile { path: path.display().to_string(), detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RouterError::ModelFile { path: path.display().to_string(), detail: e.to_string() })?;
        serde_json::from_str(&text)
            .map_err(|e| RouterError::ModelFile { path: path.display().to_string(), detail: e.to_string() })
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fits the logistic risk scorer by full-batch gradient ascent on the
/// log-likelihood of (features -> hallucinated). Features are standardized
/// first; constant features get unit scale. Zero-initialized weights and a
/// fixed iteration count make training deterministic; the seed is recorded
/// as metadata. Single-class data degrades to a constant model at the
/// training prevalence.
pub fn train_risk_model(
    examples: &[(RouteFeatures, bool)],
    seed: u64,
) -> Result<RiskModel, RouterError> {
    if examples.is_empty() {
        return Err(RouterError::EmptyTrainingSet);
    }
    let n = examples.len();
    let positives = examples.iter().filter(|(_, y)| *y).count();
    let feature_names = FEATURE_NAMES.iter().map(ToString::to_string).collect();
    if positives == 0 || positives == n {
        return Ok(RiskModel {
            seed,
            sample_count: n,
            feature_names,
            kind: RiskModelKind::Constant { p_risk: positives as f64 / n as f64 },
        });
    }

    let design: Vec<[f64; FEATURE_DIM]> = examples.iter().map(|(f, _)| f.vector()).collect();
    let mut means = [0.0f64; FEATURE_DIM];
    for row in &design {
        for j in 0..FEATURE_DIM {
            means[j] += row[j];
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut sds = [0.0f64; FEATURE_DIM];
    for row in &design {
        for j in 0..FEATURE_DIM {
            sds[j] += (row[j] - means[j]).powi(2);
        }
    }
    for sd in &mut sds {
        *sd = (*sd / n as f64).sqrt();
        if *sd < 1e-12 {
            *sd = 1.0;
        }
    }
    let standardized: Vec<[f64; FEATURE_DIM]> = design
        .iter()
        .map(|row| std::array::from_fn(|j| (row[j] - means[j]) / sds[j]))
        .collect();
    let targets: Vec<f64> = examples.iter().map(|(_, y)| f64::from(u8::from(*y))).collect();

    let mut bias = 0.0f64;
    let mut weights = [0.0f64; FEATURE_DIM];
    for _ in 0..TRAINING_ITERATIONS {
        let mut grad_bias = 0.0f64;
        let mut grad = [0.0f64; FEATURE_DIM];
        for (row, y) in standardized.iter().zip(&targets) {
            let mut z = bias;
            for j in 0..FEATURE_DIM {
                z += weights[j] * row[j];
            }
            let residual = y - sigmoid(z);
            grad_bias += residual;
            for j in 0..FEATURE_DIM {
                grad[j] += residual * row[j];
            }
        }
        bias += TRAINING_LEARNING_RATE * grad_bias / n as f64;
        for j in 0..FEATURE_DIM {
            weights[j] += TRAINING_LEARNING_RATE * grad[j] / n as f64;
        }
    }

    Ok(RiskModel {
        seed,
        sample_count: n,
        feature_names,
        kind: RiskModelKind::Logistic {
            feature_means: means.to_vec(),
            feature_sds: sds.to_vec(),
            bias,
            weights: weights.to_vec(),
        },
    })
}

// ── routing ────────────────────────────────────────────────────────────────

/// Risk cutoffs; high risk above `theta_high`, medium above `theta_med`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteThresholds {
    pub theta_high: f64,
    pub theta_med: f64,
}

impl Default for RouteThresholds {
    fn default() -> Self {
        Self { theta_high: 0.7, theta_med: 0.4 }
    }
}

impl RouteThresholds {
    pub fn validate(&self) -> Result<(), RouterError> {
        let ordered = 0.0 <= self.theta_med
            && self.theta_med < self.theta_high
            && self.theta_high <= 1.0;
        if ordered {
            Ok(())
        } else {
            Err(RouterError::InvalidThresholds {
                theta_high: self.theta_high,
                theta_med: self.theta_med,
            })
        }
    }
}

/// Branch structure: p > theta_high routes to self-evaluation when its cost
/// fits the budget (self-consistency otherwise); theta_med < p <= theta_high
/// routes to self-consistency; the rest routes to the entailment scorer.
pub fn route(
    p_risk: f64,
    budget: f64,
    thresholds: &RouteThresholds,
    costs: &CostTable,
) -> Result<Method, RouterError> {
    thresholds.validate()?;
    assert!((0.0..=1.0).contains(&p_risk), "p_risk out of [0,1]: {p_risk}");
    assert!(budget >= 0.0, "budget must be nonnegative, got {budget}");
    Ok(if p_risk > thresholds.theta_high {
        if costs.forward_passes(Method::SelfEval) <= budget {
            Method::SelfEval
        } else {
            Method::SelfConsistency
        }
    } else if p_risk > thresholds.theta_med {
        Method::SelfConsistency
    } else {
        Method::Nli
    })
}

/// Mean routed cost and the reduction factor against always running
/// self-evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub mean_passes: f64,
    /// cost(self-evaluation) / mean; `None` (UNDEFINED) when the mean is
    /// zero.
    pub reduction_vs_uniform_se: Option<f64>,
}

/// Expected cost of a routing distribution. Fractions must be nonnegative
/// and sum to 1.
#[must_use]
pub fn expected_cost(fractions: &BTreeMap<Method, f64>, costs: &CostTable) -> CostSummary {
    assert!(fractions.values().all(|f| *f >= 0.0), "fractions must be nonnegative");
    let total: f64 = fractions.values().sum();
    assert!((total - 1.0).abs() < 1e-9, "fractions must sum to 1, got {total}");
    let mean_passes: f64 =
        fractions.iter().map(|(m, f)| f * costs.forward_passes(*m)).sum();
    let reduction = (mean_passes > 0.0)
        .then(|| costs.forward_passes(Method::SelfEval) / mean_passes);
    CostSummary { mean_passes, reduction_vs_uniform_se: reduction }
}

/// Routed fractions over `n` seeded uniform risk draws. Always reports all
/// three routable methods, including zero fractions.
pub fn simulate_uniform_risk(
    n: usize,
    seed: u64,
    thresholds: &RouteThresholds,
    budget: f64,
    costs: &CostTable,
) -> Result<BTreeMap<Method, f64>, RouterError> {
    thresholds.validate()?;
    assert!(n > 0, "simulation needs at least one draw");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<Method, usize> =
        [(Method::SelfEval, 0), (Method::SelfConsistency, 0), (Method::Nli, 0)]
            .into_iter()
            .collect();
    for _ in 0..n {
        let p = rng.gen::<f64>();
        *counts.entry(route(p, budget, thresholds, costs)?).or_default() += 1;
    }
    Ok(counts.into_iter().map(|(m, c)| (m, c as f64 / n as f64)).collect())
}
