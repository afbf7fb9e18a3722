//! Claim extraction and soft set agreement.
//!
//! Claims are short declarative strings pulled out of a model response. All
//! downstream comparisons run on canonical forms: lowercased, trimmed, with
//! terminal punctuation stripped, duplicates removed.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, Embedder};

/// Cosine threshold above which two claims count as matching.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.85;

/// Canonical claim text: lowercased, trimmed, terminal punctuation stripped.
/// Canonicalization is idempotent.
#[must_use]
pub fn canonicalize(claim: &str) -> String {
    claim.trim().to_lowercase().trim_end_matches(['.', '!', '?', ',', ';', ':']).trim_end().to_string()
}

/// Splits text into sentences on runs of `.`, `!`, `?` followed by
/// whitespace or end of text. Punctuation stays attached to its sentence.
#[must_use]
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((idx, c)) = chars.next() {
        let terminal = matches!(c, '.' | '!' | '?');
        let next = chars.peek().map(|&(_, n)| n);
        let run_continues = matches!(next, Some('.' | '!' | '?'));
        if terminal && !run_continues && next.map_or(true, char::is_whitespace) {
            let end = idx + c.len_utf8();
            let sentence = text[start..end].trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// A deduplicated set of canonical claims from one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSet {
    claims: Vec<String>,
    pub source_response_id: String,
}

impl ClaimSet {
    /// Canonicalizes, drops empties, and deduplicates preserving first
    /// occurrence order.
    #[must_use]
    pub fn new<I, S>(raw: I, source_response_id: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut claims = Vec::new();
        for item in raw {
            let canonical = canonicalize(item.as_ref());
            if !canonical.is_empty() && !claims.contains(&canonical) {
                claims.push(canonical);
            }
        }
        Self { claims, source_response_id: source_response_id.into() }
    }

    #[must_use]
    pub fn empty(source_response_id: impl Into<String>) -> Self {
        Self { claims: Vec::new(), source_response_id: source_response_id.into() }
    }

    #[must_use]
    pub fn claims(&self) -> &[String] {
        &self.claims
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.claims.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }
}

/// Extracts claims from a response via the backend's decomposition
/// capability. An empty response yields an empty set; a decomposition that
/// fails or returns nothing falls back to sentence segmentation.
pub fn extract_claims<B: Backend + ?Sized>(
    backend: &B,
    response: &str,
    source_response_id: &str,
) -> ClaimSet {
    if response.trim().is_empty() {
        return ClaimSet::empty(source_response_id);
    }
    let decomposed = backend.decompose(response).unwrap_or_default();
    let set = ClaimSet::new(decomposed, source_response_id);
    if !set.is_empty() {
        return set;
    }
    ClaimSet::new(segment_sentences(response), source_response_id)
}

/// Soft Jaccard agreement between two claim sets.
///
/// Candidate pairs are every `(claim in a, claim in b)` whose embedding
/// cosine reaches `threshold`. Pairs are sorted by descending cosine (ties
/// broken on the unordered text pair, so the order is symmetric in `a` and
/// `b`) and matched greedily, each claim at most once. With `m` matches the
/// agreement is `m / (|a| + |b| - m)`. Two empty sets agree at 1.0; exactly
/// one empty set agrees at 0.0.
pub fn claim_set_agreement(
    a: &ClaimSet,
    b: &ClaimSet,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<f64, BackendError> {
    if a.is_empty() && b.is_empty() {
        return Ok(1.0);
    }
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let mut texts: Vec<String> = Vec::with_capacity(a.len() + b.len());
    texts.extend(a.claims().iter().cloned());
    texts.extend(b.claims().iter().cloned());
    let embeddings = embedder.embed(&texts)?;
    let (ea, eb) = embeddings.split_at(a.len());

    struct Candidate<'t> {
        cosine: f64,
        lo: &'t str,
        hi: &'t str,
        i: usize,
        j: usize,
    }
    let mut candidates = Vec::new();
    for (i, ca) in a.claims().iter().enumerate() {
        for (j, cb) in b.claims().iter().enumerate() {
            let cosine = ea[i].cosine(&eb[j]);
            if cosine >= threshold {
                let (lo, hi) = if ca <= cb { (ca.as_str(), cb.as_str()) } else { (cb.as_str(), ca.as_str()) };
                candidates.push(Candidate { cosine, lo, hi, i, j });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.cosine
            .partial_cmp(&x.cosine)
            .expect("cosines are finite")
            .then_with(|| x.lo.cmp(y.lo))
            .then_with(|| x.hi.cmp(y.hi))
    });

    let mut a_used = vec![false; a.len()];
    let mut b_used = vec![false; b.len()];
    let mut matched = 0usize;
    for c in &candidates {
        if !a_used[c.i] && !b_used[c.j] {
            a_used[c.i] = true;
            b_used[c.j] = true;
            matched += 1;
        }
    }
    Ok(matched as f64 / (a.len() + b.len() - matched) as f64)
}
