//! Uniform interface to model capabilities.
//!
//! Scorers and the harness talk to a [`Backend`] trait object and never care
//! whether calls are served by the deterministic [`mock::MockBackend`] or the
//! HTTP [`remote::RemoteBackend`]. Narrower capability traits ([`Embedder`],
//! [`Entailer`]) exist so tests can stub a single capability.

pub mod mock;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::MockBackend;
pub use remote::{RemoteBackend, RemoteConfig};

/// Errors surfaced by backend calls.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure after exhausting retries.
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    /// The backend answered with a non-2xx wire response.
    #[error("backend refused request (status {status}): {detail}")]
    Refused { status: u16, detail: String },
    /// The backend answered 2xx but the payload was malformed or incomplete.
    #[error("malformed backend response: {0}")]
    Malformed(String),
    /// A caller violated a precondition (empty batch, k = 0, ...).
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Local I/O while loading fixtures or corpora.
    #[error("backend i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoding controls passed through to generation calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    /// Sampling temperature; 0 means greedy and implies determinism.
    pub temperature: f64,
    /// Nucleus mass in (0, 1].
    pub top_p: f64,
    pub max_tokens: u32,
}

impl DecodingParams {
    /// Greedy decoding used for the primary answer.
    #[must_use]
    pub fn greedy() -> Self {
        Self { temperature: 0.0, top_p: 1.0, max_tokens: 512 }
    }

    /// Stochastic decoding used when drawing the K consistency samples.
    #[must_use]
    pub fn sampling() -> Self {
        Self { temperature: 0.7, top_p: 0.95, max_tokens: 512 }
    }

    /// Validates the documented ranges.
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Builds a vector, rescaling to unit L2 norm. A zero vector is replaced
    /// by the first basis vector so downstream cosines stay well defined.
    #[must_use]
    pub fn new(mut values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "embedding dimension must be positive");
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for v in &mut values {
                *v /= norm;
            }
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        }
        Self { values }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity; both vectors are unit norm so this is a dot product,
    /// clamped against floating-point spill past [-1, 1].
    #[must_use]
    pub fn cosine(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "embedding dimensions differ");
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

/// Entailment probability for an ordered (premise, hypothesis) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entailment {
    /// P(premise entails hypothesis), in [0, 1].
    pub probability: f64,
}

/// Text embedding capability.
pub trait Embedder: Send + Sync {
    /// Embeds a batch; output order matches input order, all vectors share a
    /// dimension, and identical texts map to identical vectors.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Directional entailment capability.
pub trait Entailer: Send + Sync {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<Entailment, BackendError>;
}

/// Full model-capability surface used by the scorers and the harness.
pub trait Backend: Embedder + Entailer {
    /// Single completion for a prompt.
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError>;

    /// K completions for one prompt, in request order. `k >= 1`.
    fn sample_k(
        &self,
        prompt: &str,
        k: usize,
        params: &DecodingParams,
    ) -> Result<Vec<String>, BackendError>;

    /// Decomposes a response into atomic claim texts (possibly empty).
    fn decompose(&self, response: &str) -> Result<Vec<String>, BackendError>;

    /// Self-rates each claim on a 1-10 support scale, in claim order.
    fn rate_claims(
        &self,
        query: &str,
        response: &str,
        claims: &[String],
    ) -> Result<Vec<u8>, BackendError>;

    /// Judges each claim as supported/unsupported given the query and
    /// context. Returns per-claim verdicts in the original claim order plus
    /// the number of verdicts that could not be parsed (counted unsupported).
    fn judge_supported(
        &self,
        query: &str,
        context: &str,
        claims: &[String],
    ) -> Result<JudgeVerdicts, BackendError>;
}

/// Verdicts from the support judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdicts {
    /// One flag per claim, original claim order.
    pub supported: Vec<bool>,
    /// Verdicts that failed to parse and were recorded as unsupported.
    pub unparseable: usize,
}

// ── reply parsers ──────────────────────────────────────────────────────────
// The remote backend prompts a chat model and must recover structure from
// free text. Both parsers are total: any reply yields a full-length result.

/// Extracts one 1-10 rating per claim from a rating reply.
///
/// For claim `i` (1-based) the parser locates the marker `claim i` (case
/// insensitive, not followed by another digit) and reads the first integer
/// after it. Ratings outside 1-10, or claims with no marker, fall back to the
/// neutral rating 5.
#[must_use]
pub fn parse_ratings(reply: &str, n_claims: usize) -> Vec<u8> {
    let lower = reply.to_lowercase();
    (1..=n_claims)
        .map(|i| {
            find_indexed_marker(&lower, "claim ", i)
                .and_then(|pos| first_integer_after(&lower, pos))
                .filter(|r| (1..=10).contains(r))
                .map_or(5, |r| r as u8)
        })
        .collect()
}

/// Extracts one supported/unsupported verdict per claim from a judge reply
/// formatted like `1: SUPPORTED 2: NOT SUPPORTED`. A claim whose verdict is
/// missing or unrecognizable is recorded as unsupported and tallied.
#[must_use]
pub fn parse_verdicts(reply: &str, n_claims: usize) -> JudgeVerdicts {
    let lower = reply.to_lowercase();
    let mut supported = Vec::with_capacity(n_claims);
    let mut unparseable = 0;
    for i in 1..=n_claims {
        let start = find_indexed_marker(&lower, "", i);
        let verdict = start.and_then(|pos| {
            let end = find_indexed_marker(&lower, "", i + 1).unwrap_or(lower.len());
            let window = &lower[pos..end.max(pos)];
            if let Some(sup) = window.find("supported") {
                // "not supported" and "unsupported" both negate.
                let negated = window[..sup].contains("not")
                    || window[..sup].trim_end().ends_with("un")
                    || window[sup.saturating_sub(2)..sup].contains("un");
                Some(!negated)
            } else {
                None
            }
        });
        match verdict {
            Some(v) => supported.push(v),
            None => {
                supported.push(false);
                unparseable += 1;
            }
        }
    }
    JudgeVerdicts { supported, unparseable }
}

/// Extracts claim texts from a numbered-list reply, one claim per nonempty
/// line, stripping leading enumeration (`1.`, `2)`, `-`, `*`) and whitespace.
#[must_use]
pub fn parse_claim_lines(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|line| {
            let trimmed = line.trim();
            let without_enum = trimmed
                .trim_start_matches(|c: char| c.is_ascii_digit())
                .trim_start_matches(['.', ')', ':', '-', '*'])
                .trim_start();
            // Only treat the prefix as enumeration when something was there.
            if without_enum.len() < trimmed.len() { without_enum } else { trimmed }
        })
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Finds `"{prefix}{i}"` where `i` is not a prefix of a longer number, e.g.
/// the marker for claim 1 must not match inside "claim 12". Returns the byte
/// offset just past the matched index digits.
fn find_indexed_marker(lower: &str, prefix: &str, i: usize) -> Option<usize> {
    let needle = format!("{prefix}{i}");
    let mut from = 0;
    while let Some(rel) = lower[from..].find(&needle) {
        let start = from + rel;
        let end = start + needle.len();
        let digit_follows =
            lower[end..].chars().next().is_some_and(|c| c.is_ascii_digit());
        let digit_precedes = prefix.is_empty()
            && lower[..start].chars().next_back().is_some_and(|c| c.is_ascii_digit());
        if !digit_follows && !digit_precedes {
            return Some(end);
        }
        from = end;
    }
    None
}

/// First decimal integer at or after `pos`, capped at 4 digits.
fn first_integer_after(s: &str, pos: usize) -> Option<u64> {
    let bytes = s.as_bytes();
    let mut i = pos;
    while i < bytes.len() && !bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == bytes.len() {
        return None;
    }
    let start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() && i - start < 4 {
        i += 1;
    }
    s[start..i].parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_parser_reads_the_documented_format() {
        assert_eq!(parse_ratings("Claim 1: 7/10. Claim 2: 3/10.", 2), vec![7, 3]);
    }

    #[test]
    fn rating_parser_falls_back_to_neutral() {
        // No marker for claim 2, rating out of range for claim 3.
        assert_eq!(parse_ratings("Claim 1: 9/10. Claim 3: 12/10.", 3), vec![9, 5, 5]);
        assert_eq!(parse_ratings("total nonsense", 2), vec![5, 5]);
        assert_eq!(parse_ratings("", 1), vec![5]);
    }

    #[test]
    fn rating_parser_does_not_confuse_claim_1_with_claim_12() {
        let reply = "Claim 12: 9/10. Claim 1: 2/10.";
        assert_eq!(parse_ratings(reply, 1), vec![2]);
    }

    #[test]
    fn rating_parser_accepts_bare_integers_and_case() {
        assert_eq!(parse_ratings("CLAIM 1: 8\nclaim 2: 10/10", 2), vec![8, 10]);
    }

    #[test]
    fn verdict_parser_reads_the_documented_format() {
        let v = parse_verdicts("1: SUPPORTED 2: NOT SUPPORTED", 2);
        assert_eq!(v.supported, vec![true, false]);
        assert_eq!(v.unparseable, 0);
    }

    #[test]
    fn verdict_parser_counts_unparseable_as_unsupported() {
        let v = parse_verdicts("1: SUPPORTED 2: maybe?", 3);
        assert_eq!(v.supported, vec![true, false, false]);
        assert_eq!(v.unparseable, 2);
    }

    #[test]
    fn verdict_parser_handles_unsupported_spelling() {
        let v = parse_verdicts("1: UNSUPPORTED\n2: supported", 2);
        assert_eq!(v.supported, vec![false, true]);
        assert_eq!(v.unparseable, 0);
    }

    #[test]
    fn verdict_parser_ignores_digits_inside_larger_numbers() {
        // "10:" must not satisfy the marker for claim 1 when claim 10 exists
        // later; conversely the window for claim 1 ends at "2:".
        let v = parse_verdicts("1: not supported 2: supported", 2);
        assert_eq!(v.supported, vec![false, true]);
    }

    #[test]
    fn claim_line_parser_strips_enumeration() {
        let reply = "1. Paris is the capital of France.\n2) France is in Europe.\n- stray bullet\n\n";
        assert_eq!(
            parse_claim_lines(reply),
            vec![
                "Paris is the capital of France.".to_string(),
                "France is in Europe.".to_string(),
                "stray bullet".to_string(),
            ]
        );
        assert!(parse_claim_lines("").is_empty());
        assert_eq!(parse_claim_lines("plain claim"), vec!["plain claim".to_string()]);
    }

    #[test]
    fn embedding_vectors_are_unit_norm_and_cosine_is_clamped() {
        let a = EmbeddingVector::new(vec![3.0, 4.0]);
        let norm: f64 = a.values().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let b = EmbeddingVector::new(vec![3.0, 4.0]);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        let zero = EmbeddingVector::new(vec![0.0, 0.0]);
        assert_eq!(zero.values(), &[1.0, 0.0]);
    }

    #[test]
    fn decoding_params_validate_ranges() {
        assert!(DecodingParams::greedy().validate().is_ok());
        assert!(DecodingParams::sampling().validate().is_ok());
        let bad = DecodingParams { temperature: -1.0, ..DecodingParams::greedy() };
        assert!(bad.validate().is_err());
        let bad = DecodingParams { top_p: 0.0, ..DecodingParams::greedy() };
        assert!(bad.validate().is_err());
    }
}
