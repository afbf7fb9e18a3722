//! Composite response-quality score: a weighted geometric mean of factual
//! accuracy, semantic coherence, and evidence traceability.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Embedder, Entailer};
use crate::claims::{segment_sentences, ClaimSet};
use crate::retrieval::Retriever;

/// Entailment probability below which a claim counts as contradicting the
/// gold answer.
pub const CONTRADICTION_CUTOFF: f64 = 0.25;

/// Best-evidence entailment below which a claim counts as untraceable.
pub const TRACEABILITY_CUTOFF: f64 = 0.5;

/// Exponents of the geometric mean; positive and summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalluScoreWeights {
    /// Exponent on factual accuracy (1 − ε_f).
    pub alpha: f64,
    /// Exponent on semantic coherence σ_s.
    pub beta: f64,
    /// Exponent on traceability (1 − φ).
    pub gamma: f64,
}

impl Default for HalluScoreWeights {
    fn default() -> Self {
        Self { alpha: 0.4, beta: 0.3, gamma: 0.3 }
    }
}

impl HalluScoreWeights {
    /// Panics unless all weights are positive and sum to 1 (within 1e-9).
    pub fn validate(&self) {
        assert!(
            self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0,
            "weights must be positive"
        );
        let sum = self.alpha + self.beta + self.gamma;
        assert!((sum - 1.0).abs() < 1e-9, "weights must sum to 1, got {sum}");
    }
}

/// The three component rates, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalluScoreComponents {
    pub factual_error_rate: f64,
    pub semantic_coherence: f64,
    pub fabrication_rate: f64,
}

/// (1 − ε_f)^α · σ_s^β · (1 − φ)^γ. Zero whenever any factor vanishes;
/// monotone non-increasing in ε_f and φ, non-decreasing in σ_s.
#[must_use]
pub fn halluscore(components: &HalluScoreComponents, weights: &HalluScoreWeights) -> f64 {
    weights.validate();
    let HalluScoreComponents { factual_error_rate, semantic_coherence, fabrication_rate } =
        *components;
    for (name, v) in [
        ("factual_error_rate", factual_error_rate),
        ("semantic_coherence", semantic_coherence),
        ("fabrication_rate", fabrication_rate),
    ] {
        assert!((0.0..=1.0).contains(&v), "{name} out of [0,1]: {v}");
    }
    (1.0 - factual_error_rate).powf(weights.alpha)
        * semantic_coherence.powf(weights.beta)
        * (1.0 - fabrication_rate).powf(weights.gamma)
}

/// Fraction of claims whose best entailment against any gold answer falls
/// below [`CONTRADICTION_CUTOFF`]. Zero claims → 0.
pub fn compute_factual_error_rate(
    claims: &ClaimSet,
    gold: &[String],
    entailer: &dyn Entailer,
) -> Result<f64, BackendError> {
    if claims.is_empty() {
        return Ok(0.0);
    }
    let mut erroneous = 0usize;
    for claim in claims.claims() {
        let mut best = 0.0f64;
        for answer in gold {
            let e = entailer.entail(answer, claim)?;
            best = best.max(e.probability);
        }
        if best < CONTRADICTION_CUTOFF {
            erroneous += 1;
        }
    }
    Ok(erroneous as f64 / claims.len() as f64)
}

/// Semantic coherence with an untrusted-convention marker for short inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub value: f64,
    /// True when the response had fewer than two sentences and the value is
    /// the 1.0 convention rather than a measurement.
    pub degenerate: bool,
}

/// Mean pairwise cosine similarity of sentence embeddings, affinely mapped
/// from [−1, 1] to [0, 1]. Fewer than two sentences → 1.0, flagged.
pub fn compute_semantic_coherence(
    response: &str,
    embedder: &dyn Embedder,
) -> Result<Coherence, BackendError> {
    let sentences = segment_sentences(response);
    if sentences.len() < 2 {
        return Ok(Coherence { value: 1.0, degenerate: true });
    }
    let embeddings = embedder.embed(&sentences)?;
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            total += embeddings[i].cosine(&embeddings[j]);
            pairs += 1;
        }
    }
    let mean_cosine = total / pairs as f64;
    Ok(Coherence { value: (mean_cosine + 1.0) / 2.0, degenerate: false })
}

/// Fabrication rate with a tally of evidence-retrieval failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fabrication {
    pub value: f64,
    /// Claims whose retrieval attempt failed; they count as untraceable.
    pub retrieval_failures: usize,
}

/// Fraction of claims whose best entailment over all evidence (context
/// sentences plus `top_l` retrieved passages) falls below
/// [`TRACEABILITY_CUTOFF`]. Zero claims → 0; retrieval failures make the
/// affected claim untraceable and are tallied.
pub fn compute_fabrication_rate(
    claims: &ClaimSet,
    context: Option<&str>,
    retriever: &dyn Retriever,
    entailer: &dyn Entailer,
    top_l: usize,
) -> Result<Fabrication, BackendError> {
    if claims.is_empty() {
        return Ok(Fabrication { value: 0.0, retrieval_failures: 0 });
    }
    let context_sentences = context.map(segment_sentences).unwrap_or_default();
    let mut untraceable = 0usize;
    let mut retrieval_failures = 0usize;
    for claim in claims.claims() {
        let mut best = 0.0f64;
        for sentence in &context_sentences {
            best = best.max(entailer.entail(sentence, claim)?.probability);
        }
        match retriever.retrieve(claim, top_l) {
            Ok(passages) => {
                for passage in &passages {
                    best = best.max(entailer.entail(&passage.text, claim)?.probability);
                }
            }
            Err(_) => retrieval_failures += 1,
        }
        if best < TRACEABILITY_CUTOFF {
            untraceable += 1;
        }
    }
    Ok(Fabrication {
        value: untraceable as f64 / claims.len() as f64,
        retrieval_failures,
    })
}
