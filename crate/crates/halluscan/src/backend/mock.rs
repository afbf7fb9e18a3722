//! Deterministic mock backend driven by fixture tables.
//!
//! Every response is a pure function of `(seed, request inputs)`, so repeated
//! runs, in the same process or across processes, produce byte-identical
//! outputs. Fixture files override specific requests; anything not covered by
//! a fixture falls back to a documented deterministic default.
//!
//! Fixture directory layout (all files optional):
//!
//! - `generate.json`: `{ "<prompt>": "<completion>" }`
//! - `samples.json`: `{ "<prompt>": ["<variant 1>", ...] }`
//! - `decompose.json`: `{ "<response>": ["<claim>", ...] }`
//! - `ratings.json`: `{ "<response>": [7, 3, ...] }`; the key `"*"` matches
//!   any response; a short array is padded by repeating its last element.
//! - `judge.json`: `[ { "query": "...", "claims": [...], "supported": [...] } ]`
//!   where `query`/`claims` are optional match filters; first match wins and
//!   the `supported` array pads like ratings.
//! - `entail.json`: `[ { "premise": "...", "hypothesis": "...", "probability": 0.8 } ]`
//!
//! Defaults: generation synthesizes a tagged answer from the seed and prompt;
//! sampling synthesizes distinct variants; decomposition returns no claims
//! (which routes callers to the sentence-segmentation fallback); ratings and
//! judge verdicts derive from the seed and claim text; entailment is 1.0 for
//! identical strings and 0.5 otherwise.
//!
//! Embeddings expand `SHA-256(seed || 0x1e || text || 0x1e || block_index)`
//! into unit-norm vectors: each 32-byte digest yields four little-endian u64
//! words mapped to `u / 2^63 - 1` in [-1, 1), blocks are concatenated until
//! the dimension is filled, then the vector is L2-normalized.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Backend, BackendError, DecodingParams, Embedder, Entailer, Entailment, JudgeVerdicts,
};
use crate::derive_seed;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// One judge fixture entry; absent filters match anything.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct JudgeFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claims: Option<Vec<String>>,
    pub supported: Vec<bool>,
}

/// One entailment fixture entry keyed by the exact (premise, hypothesis) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntailFixture {
    pub premise: String,
    pub hypothesis: String,
    pub probability: f64,
}

/// The full fixture set for a mock model. Tests and demo tooling construct
/// one in memory and `save` it; `load` reads a directory written that way.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub generate: BTreeMap<String, String>,
    #[serde(default)]
    pub samples: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub decompose: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub ratings: BTreeMap<String, Vec<u8>>,
    #[serde(default)]
    pub judge: Vec<JudgeFixture>,
    #[serde(default)]
    pub entail: Vec<EntailFixture>,
}

impl MockFixtures {
    /// Loads any of the six fixture files present under `dir`.
    pub fn load(dir: &Path) -> Result<Self, BackendError> {
        if !dir.is_dir() {
            return Err(BackendError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("mock fixture directory not found: {}", dir.display()),
            )));
        }
        let mut fx = Self::default();
        fx.generate = read_json_if_present(&dir.join("generate.json"))?.unwrap_or_default();
        fx.samples = read_json_if_present(&dir.join("samples.json"))?.unwrap_or_default();
        fx.decompose = read_json_if_present(&dir.join("decompose.json"))?.unwrap_or_default();
        fx.ratings = read_json_if_present(&dir.join("ratings.json"))?.unwrap_or_default();
        fx.judge = read_json_if_present(&dir.join("judge.json"))?.unwrap_or_default();
        fx.entail = read_json_if_present(&dir.join("entail.json"))?.unwrap_or_default();
        Ok(fx)
    }

    /// Writes the six fixture files (empty tables included) under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), BackendError> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("generate.json"), &self.generate)?;
        write_json(&dir.join("samples.json"), &self.samples)?;
        write_json(&dir.join("decompose.json"), &self.decompose)?;
        write_json(&dir.join("ratings.json"), &self.ratings)?;
        write_json(&dir.join("judge.json"), &self.judge)?;
        write_json(&dir.join("entail.json"), &self.entail)?;
        Ok(())
    }
}

fn read_json_if_present<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Option<T>, BackendError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BackendError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| BackendError::Malformed(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Fixture-table backend with deterministic defaults.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    dim: usize,
    fixtures: MockFixtures,
}

impl MockBackend {
    #[must_use]
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: DEFAULT_EMBEDDING_DIM, fixtures: MockFixtures::default() }
    }

    pub fn from_dir(dir: &Path, seed: u64) -> Result<Self, BackendError> {
        Ok(Self::new(seed).with_fixtures(MockFixtures::load(dir)?))
    }

    #[must_use]
    pub fn with_fixtures(mut self, fixtures: MockFixtures) -> Self {
        self.fixtures = fixtures;
        self
    }

    #[must_use]
    pub fn with_dim(mut self, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        self.dim = dim;
        self
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn synth_answer(&self, prompt: &str) -> String {
        format!("Mock answer {:016x}.", derive_seed(self.seed, &["generate", prompt]))
    }

    fn synth_variant(&self, prompt: &str, index: usize) -> String {
        format!(
            "Mock variant {index} {:016x}.",
            derive_seed(self.seed, &["sample", prompt, &index.to_string()])
        )
    }
}

/// Pads `values` to length `n` by repeating the last element; an empty slice
/// pads with `fill`.
fn pad_to<T: Copy>(values: &[T], n: usize, fill: T) -> Vec<T> {
    (0..n)
        .map(|i| values.get(i).or_else(|| values.last()).copied().unwrap_or(fill))
        .collect()
}

impl Embedder for MockBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<super::EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| hash_embedding(self.seed, t, self.dim)).collect())
    }
}

impl Entailer for MockBackend {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<Entailment, BackendError> {
        if premise == hypothesis {
            return Ok(Entailment { probability: 1.0 });
        }
        let fixture = self
            .fixtures
            .entail
            .iter()
            .find(|e| e.premise == premise && e.hypothesis == hypothesis);
        Ok(Entailment { probability: fixture.map_or(0.5, |e| e.probability.clamp(0.0, 1.0)) })
    }
}

impl Backend for MockBackend {
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        params.validate()?;
        Ok(self
            .fixtures
            .generate
            .get(prompt)
            .cloned()
            .unwrap_or_else(|| self.synth_answer(prompt)))
    }

    fn sample_k(
        &self,
        prompt: &str,
        k: usize,
        params: &DecodingParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        if k == 0 {
            return Err(BackendError::InvalidRequest("sample_k requires k >= 1".into()));
        }
        let fixture = self.fixtures.samples.get(prompt);
        Ok((0..k)
            .map(|i| {
                fixture
                    .and_then(|v| v.get(i).cloned())
                    .unwrap_or_else(|| self.synth_variant(prompt, i))
            })
            .collect())
    }

    fn decompose(&self, response: &str) -> Result<Vec<String>, BackendError> {
        Ok(self.fixtures.decompose.get(response).cloned().unwrap_or_default())
    }

    fn rate_claims(
        &self,
        _query: &str,
        response: &str,
        claims: &[String],
    ) -> Result<Vec<u8>, BackendError> {
        let table = &self.fixtures.ratings;
        if let Some(fixed) = table.get(response).or_else(|| table.get("*")) {
            return Ok(pad_to(fixed, claims.len(), 5)
                .into_iter()
                .map(|r| r.clamp(1, 10))
                .collect());
        }
        Ok(claims
            .iter()
            .map(|c| (derive_seed(self.seed, &["rate", response, c]) % 10 + 1) as u8)
            .collect())
    }

    fn judge_supported(
        &self,
        query: &str,
        _context: &str,
        claims: &[String],
    ) -> Result<JudgeVerdicts, BackendError> {
        let fixture = self.fixtures.judge.iter().find(|f| {
            f.query.as_deref().is_none_or(|q| q == query)
                && f.claims.as_ref().is_none_or(|c| c.as_slice() == claims)
        });
        let supported = match fixture {
            Some(f) => pad_to(&f.supported, claims.len(), false),
            None => claims
                .iter()
                .map(|c| derive_seed(self.seed, &["judge", query, c]) % 2 == 0)
                .collect(),
        };
        Ok(JudgeVerdicts { supported, unparseable: 0 })
    }
}

/// The documented SHA-256 expansion of a text into a unit-norm vector.
#[must_use]
pub fn hash_embedding(seed: u64, text: &str, dim: usize) -> super::EmbeddingVector {
    let mut values = Vec::with_capacity(dim);
    let mut block: u32 = 0;
    while values.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0x1e]);
        hasher.update(text.as_bytes());
        hasher.update([0x1e]);
        hasher.update(block.to_le_bytes());
        let digest = hasher.finalize();
        for chunk in digest.chunks_exact(8) {
            if values.len() == dim {
                break;
            }
            let word = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            values.push(word as f64 / 2f64.powi(63) - 1.0);
        }
        block += 1;
    }
    super::EmbeddingVector::new(values)
}
