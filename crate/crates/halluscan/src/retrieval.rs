//! Passage retrieval for retrieval-augmented verification.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Embedder, EmbeddingVector};

/// A passage returned by retrieval, with its relevance to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub text: String,
    /// Embedding cosine between query and passage, clamped to [0, 1].
    pub relevance: f64,
}

pub trait Retriever: Send + Sync {
    /// Returns up to `l` passages ranked by descending relevance.
    fn retrieve(&self, query: &str, l: usize) -> Result<Vec<RetrievedPassage>, BackendError>;
}

/// Retriever over an empty corpus; every query retrieves nothing.
pub struct NullRetriever;

impl Retriever for NullRetriever {
    fn retrieve(&self, _query: &str, _l: usize) -> Result<Vec<RetrievedPassage>, BackendError> {
        Ok(Vec::new())
    }
}

/// Embedding-indexed retriever over an in-memory passage list.
///
/// `from_dir` loads one passage per `*.txt` file (sorted by file name so the
/// index order is stable across platforms).
pub struct LocalCorpusRetriever {
    passages: Vec<String>,
    index: Vec<EmbeddingVector>,
    embedder: Arc<dyn Embedder>,
}

impl LocalCorpusRetriever {
    pub fn from_passages(
        passages: Vec<String>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, BackendError> {
        let passages: Vec<String> =
            passages.into_iter().map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
        let index = if passages.is_empty() { Vec::new() } else { embedder.embed(&passages)? };
        Ok(Self { passages, index, embedder })
    }

    pub fn from_dir(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, BackendError> {
        if !dir.is_dir() {
            return Err(BackendError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("corpus directory not found: {}", dir.display()),
            )));
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
            .collect();
        paths.sort();
        let mut passages = Vec::with_capacity(paths.len());
        for path in paths {
            passages.push(std::fs::read_to_string(&path)?);
        }
        Self::from_passages(passages, embedder)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.passages.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

impl Retriever for LocalCorpusRetriever {
    fn retrieve(&self, query: &str, l: usize) -> Result<Vec<RetrievedPassage>, BackendError> {
        if self.passages.is_empty() || l == 0 {
            return Ok(Vec::new());
        }
        let query_vec = self
            .embedder
            .embed(std::slice::from_ref(&query.to_string()))?
            .pop()
            .ok_or_else(|| BackendError::Malformed("embedder returned no vector".into()))?;
        let mut scored: Vec<(usize, f64)> = self
            .index
            .iter()
            .enumerate()
            .map(|(i, v)| (i, query_vec.cosine(v)))
            .collect();
        // Descending cosine; ties resolve to the earlier passage.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite cosines").then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(l)
            .map(|(i, cosine)| RetrievedPassage {
                text: self.passages[i].clone(),
                relevance: cosine.clamp(0.0, 1.0),
            })
            .collect())
    }
}
