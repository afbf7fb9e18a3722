//! Detection scorers, score-direction correction, and per-method costs.
//!
//! Every scorer returns a [`DetectionResult`] whose `raw_score` lies in
//! [0, 1]. Three methods (semantic entropy, judge, retrieval-augmented
//! verification) natively emit *confidence-like* scores whose raw direction
//! anti-correlates with hallucination; [`correct_direction`] flips exactly
//! that set so that corrected scores always read "higher = more likely
//! hallucinated".

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, Embedder, Entailer};
use crate::claims::{claim_set_agreement, segment_sentences, ClaimSet};
use crate::retrieval::Retriever;

/// Detection methods and reference baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Self-consistency: disagreement across K sampled answers.
    #[serde(rename = "sc")]
    SelfConsistency,
    /// Self-evaluation: the model rates its own claims.
    #[serde(rename = "se")]
    SelfEval,
    /// Semantic entropy over mutual-entailment clusters.
    #[serde(rename = "seme")]
    SemanticEntropy,
    /// A judge model labels claims supported/unsupported.
    #[serde(rename = "judge")]
    Judge,
    /// Entailment of claims against context evidence sentences.
    #[serde(rename = "nli")]
    Nli,
    /// Retrieval-augmented verification against a passage corpus.
    #[serde(rename = "rav")]
    Rav,
    #[serde(rename = "random")]
    RandomBaseline,
    #[serde(rename = "always_positive")]
    AlwaysPositive,
    #[serde(rename = "majority")]
    MajorityClass,
}

/// The six detection methods, in canonical order.
pub const DETECTORS: [Method; 6] = [
    Method::SelfConsistency,
    Method::SelfEval,
    Method::SemanticEntropy,
    Method::Judge,
    Method::Nli,
    Method::Rav,
];

impl Method {
    /// Short stable name used in CLI arguments, directories, and reports.
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Method::SelfConsistency => "sc",
            Method::SelfEval => "se",
            Method::SemanticEntropy => "seme",
            Method::Judge => "judge",
            Method::Nli => "nli",
            Method::Rav => "rav",
            Method::RandomBaseline => "random",
            Method::AlwaysPositive => "always_positive",
            Method::MajorityClass => "majority",
        }
    }

    /// Whether the raw score direction anti-correlates with hallucination.
    /// This set is fixed: semantic entropy, judge, and retrieval-augmented
    /// verification report support/confidence rather than risk.
    #[must_use]
    pub fn is_inverted(self) -> bool {
        matches!(self, Method::SemanticEntropy | Method::Judge | Method::Rav)
    }

    #[must_use]
    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Method::RandomBaseline | Method::AlwaysPositive | Method::MajorityClass
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sc" => Ok(Method::SelfConsistency),
            "se" => Ok(Method::SelfEval),
            "seme" => Ok(Method::SemanticEntropy),
            "judge" => Ok(Method::Judge),
            "nli" => Ok(Method::Nli),
            "rav" => Ok(Method::Rav),
            "random" => Ok(Method::RandomBaseline),
            "always_positive" => Ok(Method::AlwaysPositive),
            "majority" => Ok(Method::MajorityClass),
            other => Err(format!(
                "unknown method `{other}` (expected one of sc, se, seme, judge, nli, rav, \
                 random, always_positive, majority)"
            )),
        }
    }
}

/// Forward-pass cost per scored response, keyed by method.
///
/// The default charges the K-sampling methods K=5 passes, the judge a single
/// pass, and nothing to the methods that only run auxiliary models
/// (embeddings, entailment) or no model at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    passes: BTreeMap<Method, f64>,
}

impl Default for CostTable {
    fn default() -> Self {
        let passes = [
            (Method::SelfConsistency, 5.0),
            (Method::SelfEval, 5.0),
            (Method::SemanticEntropy, 5.0),
            (Method::Judge, 1.0),
            (Method::Nli, 0.0),
            (Method::Rav, 0.0),
            (Method::RandomBaseline, 0.0),
            (Method::AlwaysPositive, 0.0),
            (Method::MajorityClass, 0.0),
        ]
        .into_iter()
        .collect();
        Self { passes }
    }
}

impl CostTable {
    #[must_use]
    pub fn forward_passes(&self, method: Method) -> f64 {
        self.passes.get(&method).copied().unwrap_or(0.0)
    }

    /// Returns a table with one method's cost replaced.
    #[must_use]
    pub fn with_override(mut self, method: Method, passes: f64) -> Self {
        assert!(passes >= 0.0, "forward-pass cost must be non-negative");
        self.passes.insert(method, passes);
        self
    }
}

/// Optional per-claim / per-cluster detail attached to a result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Input was degenerate (zero claims, K = 1, ...) and a documented
    /// convention supplied the score.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    /// Verdicts that failed to parse (counted unsupported).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub parse_failures: usize,
    /// Retrieval calls that failed (evidence strength 0 for those claims).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub retrieval_failures: usize,
    /// Context was empty, so the query stood in as evidence.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub query_evidence: bool,
    /// Claim-level values (ratings / 10, entailment or evidence strengths).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_claim: Option<Vec<f64>>,
    /// Pairwise agreements, row-major over sampled-response pairs i < j.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_agreements: Option<Vec<f64>>,
    /// Semantic cluster sizes, descending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// One method's verdict on one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: Method,
    /// Score as natively produced, in [0, 1].
    pub raw_score: f64,
    /// Direction-corrected score: higher always means more hallucination.
    pub corrected_score: f64,
    /// Forward passes charged for this response.
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Diagnostics::is_default")]
    pub diagnostics: Diagnostics,
}

impl Diagnostics {
    fn is_default(&self) -> bool {
        self == &Self::default()
    }
}

impl DetectionResult {
    /// Builds a result from a raw score, applying direction correction and
    /// the default cost table.
    #[must_use]
    pub fn from_raw(method: Method, raw_score: f64, diagnostics: Diagnostics) -> Self {
        let corrected_score = correct_direction(method, raw_score);
        Self {
            method,
            raw_score,
            corrected_score,
            cost: CostTable::default().forward_passes(method),
            diagnostics,
        }
    }

    /// Re-prices the result under a configured cost table.
    pub fn reprice(&mut self, costs: &CostTable) {
        self.cost = costs.forward_passes(self.method);
    }
}

/// Flips raw scores for the inverted methods so corrected scores correlate
/// positively with hallucination. Applying it twice round-trips, and for the
/// non-inverted methods it is the identity.
///
/// Raw scores outside [0, 1] violate the scorer contract.
#[must_use]
pub fn correct_direction(method: Method, raw_score: f64) -> f64 {
    assert!(
        (0.0..=1.0).contains(&raw_score),
        "raw score out of range for {method}: {raw_score}"
    );
    if method.is_inverted() {
        1.0 - raw_score
    } else {
        raw_score
    }
}

// ── self-consistency ───────────────────────────────────────────────────────

/// Self-consistency: one minus the mean pairwise claim-set agreement across
/// the K sampled responses' claim sets (K >= 2, K(K-1)/2 pairs).
pub fn score_sc(
    sample_claims: &[ClaimSet],
    embedder: &dyn Embedder,
    match_threshold: f64,
) -> Result<DetectionResult, BackendError> {
    if sample_claims.len() < 2 {
        return Err(BackendError::InvalidRequest(format!(
            "self-consistency needs at least 2 sampled responses, got {}",
            sample_claims.len()
        )));
    }
    let mut agreements = Vec::with_capacity(sample_claims.len() * (sample_claims.len() - 1) / 2);
    for i in 0..sample_claims.len() {
        for j in (i + 1)..sample_claims.len() {
            agreements.push(claim_set_agreement(
                &sample_claims[i],
                &sample_claims[j],
                embedder,
                match_threshold,
            )?);
        }
    }
    let mean = agreements.iter().sum::<f64>() / agreements.len() as f64;
    let raw = (1.0 - mean).clamp(0.0, 1.0);
    let diagnostics = Diagnostics { pair_agreements: Some(agreements), ..Default::default() };
    Ok(DetectionResult::from_raw(Method::SelfConsistency, raw, diagnostics))
}

// ── self-evaluation ────────────────────────────────────────────────────────

/// Self-evaluation: the model rates each claim 1-10; the score is one minus
/// the mean rating divided by 10. A zero-claim response is rated as a single
/// whole-response claim.
pub fn score_se<B: Backend + ?Sized>(
    query: &str,
    response: &str,
    claims: &ClaimSet,
    backend: &B,
) -> Result<DetectionResult, BackendError> {
    let whole_response;
    let (rated, degenerate): (&[String], bool) = if claims.is_empty() {
        whole_response = [response.to_string()];
        (&whole_response, true)
    } else {
        (claims.claims(), false)
    };
    let ratings = backend.rate_claims(query, response, rated)?;
    if ratings.len() != rated.len() {
        return Err(BackendError::Malformed(format!(
            "expected {} ratings, got {}",
            rated.len(),
            ratings.len()
        )));
    }
    let per_claim: Vec<f64> = ratings.iter().map(|&r| f64::from(r) / 10.0).collect();
    let mean = per_claim.iter().sum::<f64>() / per_claim.len() as f64;
    let raw = (1.0 - mean).clamp(0.0, 1.0);
    let diagnostics =
        Diagnostics { degenerate, per_claim: Some(per_claim), ..Default::default() };
    Ok(DetectionResult::from_raw(Method::SelfEval, raw, diagnostics))
}

// ── semantic entropy ───────────────────────────────────────────────────────

/// Greedy mutual-entailment clustering of K sampled responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClustering {
    /// Original sample indices, grouped; every index appears exactly once.
    pub clusters: Vec<Vec<usize>>,
    /// Number of clustered samples (K).
    pub total: usize,
}

impl SemanticClustering {
    /// Cluster sizes in descending order.
    #[must_use]
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.clusters.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}

/// Clusters responses by mutual entailment against each cluster's
/// representative (its lexicographically first member). Samples are visited
/// in lexicographic order, so the resulting cluster-size multiset does not
/// depend on input order. Two responses belong together when each entails
/// the other with probability >= 0.5.
pub fn cluster_semantic(
    samples: &[String],
    entailer: &dyn Entailer,
) -> Result<SemanticClustering, BackendError> {
    if samples.is_empty() {
        return Err(BackendError::InvalidRequest(
            "semantic clustering needs at least one sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].cmp(&samples[b]).then(a.cmp(&b)));

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut representatives: Vec<usize> = Vec::new();
    for &idx in &order {
        let text = &samples[idx];
        let mut joined = false;
        for (c, &rep) in representatives.iter().enumerate() {
            let rep_text = &samples[rep];
            let mutual = text == rep_text
                || (entailer.entail(rep_text, text)?.probability >= 0.5
                    && entailer.entail(text, rep_text)?.probability >= 0.5);
            if mutual {
                clusters[c].push(idx);
                joined = true;
                break;
            }
        }
        if !joined {
            representatives.push(idx);
            clusters.push(vec![idx]);
        }
    }
    Ok(SemanticClustering { clusters, total: samples.len() })
}

/// Semantic entropy: Shannon entropy of the cluster-size distribution,
/// normalized by ln K to land in [0, 1]. K = 1 yields zero entropy.
#[must_use]
pub fn score_seme(clustering: &SemanticClustering) -> DetectionResult {
    let k = clustering.total;
    let sizes = clustering.sizes();
    let raw = if k <= 1 {
        0.0
    } else {
        let entropy: f64 = sizes
            .iter()
            .map(|&n| {
                let p = n as f64 / k as f64;
                -p * p.ln()
            })
            .sum();
        (entropy / (k as f64).ln()).clamp(0.0, 1.0)
    };
    let diagnostics = Diagnostics {
        degenerate: k <= 1,
        cluster_sizes: Some(sizes),
        ..Default::default()
    };
    DetectionResult::from_raw(Method::SemanticEntropy, raw, diagnostics)
}

// ── judge ──────────────────────────────────────────────────────────────────

/// Judge: one minus the fraction of claims the judge marks supported. A
/// zero-claim response scores the neutral 0.5 and is flagged.
pub fn score_judge<B: Backend + ?Sized>(
    query: &str,
    context: &str,
    claims: &ClaimSet,
    backend: &B,
) -> Result<DetectionResult, BackendError> {
    if claims.is_empty() {
        let diagnostics = Diagnostics { degenerate: true, ..Default::default() };
        return Ok(DetectionResult::from_raw(Method::Judge, 0.5, diagnostics));
    }
    let verdicts = backend.judge_supported(query, context, claims.claims())?;
    if verdicts.supported.len() != claims.len() {
        return Err(BackendError::Malformed(format!(
            "expected {} verdicts, got {}",
            claims.len(),
            verdicts.supported.len()
        )));
    }
    let supported = verdicts.supported.iter().filter(|&&s| s).count();
    let raw = supported as f64 / claims.len() as f64;
    let diagnostics = Diagnostics {
        parse_failures: verdicts.unparseable,
        per_claim: Some(verdicts.supported.iter().map(|&s| f64::from(u8::from(s))).collect()),
        ..Default::default()
    };
    Ok(DetectionResult::from_raw(Method::Judge, raw, diagnostics))
}

// ── claim-level entailment against context ─────────────────────────────────

/// Entailment scorer: each claim is checked against its best evidence
/// sentence (highest embedding cosine among context sentences; the query
/// itself when the context is empty). The score is one minus the mean
/// entailment probability. A zero-claim response scores the neutral 0.5.
pub fn score_nli(
    query: &str,
    context: &str,
    claims: &ClaimSet,
    embedder: &dyn Embedder,
    entailer: &dyn Entailer,
) -> Result<DetectionResult, BackendError> {
    if claims.is_empty() {
        let diagnostics = Diagnostics { degenerate: true, ..Default::default() };
        return Ok(DetectionResult::from_raw(Method::Nli, 0.5, diagnostics));
    }
    let mut evidence = segment_sentences(context);
    let query_evidence = evidence.is_empty();
    if query_evidence {
        evidence.push(query.to_string());
    }
    let claim_vecs = embedder.embed(claims.claims())?;
    let evidence_vecs = embedder.embed(&evidence)?;

    let mut per_claim = Vec::with_capacity(claims.len());
    for (claim, claim_vec) in claims.claims().iter().zip(&claim_vecs) {
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (s, sentence_vec) in evidence_vecs.iter().enumerate() {
            let cos = claim_vec.cosine(sentence_vec);
            if cos > best_cos {
                best_cos = cos;
                best = s;
            }
        }
        per_claim.push(entailer.entail(&evidence[best], claim)?.probability);
    }
    let mean = per_claim.iter().sum::<f64>() / per_claim.len() as f64;
    let raw = (1.0 - mean).clamp(0.0, 1.0);
    let diagnostics =
        Diagnostics { query_evidence, per_claim: Some(per_claim), ..Default::default() };
    Ok(DetectionResult::from_raw(Method::Nli, raw, diagnostics))
}

// ── retrieval-augmented verification ───────────────────────────────────────

/// Retrieval-augmented verification: per claim, retrieve up to `l` passages
/// and take the best `entailment * relevance` as the claim's evidence
/// strength; the raw score is one minus the mean strength. Claims whose
/// retrieval fails, or that retrieve nothing, contribute zero strength.
pub fn score_rav(
    claims: &ClaimSet,
    retriever: &dyn Retriever,
    entailer: &dyn Entailer,
    l: usize,
) -> Result<DetectionResult, BackendError> {
    if claims.is_empty() {
        let diagnostics = Diagnostics { degenerate: true, ..Default::default() };
        return Ok(DetectionResult::from_raw(Method::Rav, 0.5, diagnostics));
    }
    let mut retrieval_failures = 0usize;
    let mut per_claim = Vec::with_capacity(claims.len());
    for claim in claims.claims() {
        let passages = match retriever.retrieve(claim, l) {
            Ok(passages) => passages,
            Err(_) => {
                retrieval_failures += 1;
                per_claim.push(0.0);
                continue;
            }
        };
        let mut strength = 0.0f64;
        for passage in &passages {
            let entailment = entailer.entail(&passage.text, claim)?.probability;
            strength = strength.max(entailment * passage.relevance.clamp(0.0, 1.0));
        }
        per_claim.push(strength);
    }
    let mean = per_claim.iter().sum::<f64>() / per_claim.len() as f64;
    let raw = (1.0 - mean).clamp(0.0, 1.0);
    let diagnostics = Diagnostics {
        retrieval_failures,
        per_claim: Some(per_claim),
        ..Default::default()
    };
    Ok(DetectionResult::from_raw(Method::Rav, raw, diagnostics))
}

// ── baselines ──────────────────────────────────────────────────────────────

/// Reference baselines: a seeded uniform score, the constant positive, and
/// the training-majority constant.
#[must_use]
pub fn baseline_score(method: Method, seed: u64, majority_hallucinated: bool) -> DetectionResult {
    let raw = match method {
        Method::RandomBaseline => ChaCha20Rng::seed_from_u64(seed).gen::<f64>(),
        Method::AlwaysPositive => 1.0,
        Method::MajorityClass => {
            if majority_hallucinated {
                1.0
            } else {
                0.0
            }
        }
        other => panic!("baseline_score called with detector method {other}"),
    };
    DetectionResult::from_raw(method, raw, Diagnostics::default())
}
