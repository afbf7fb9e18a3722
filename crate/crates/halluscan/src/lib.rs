//! Hallucination detection and evaluation toolkit.
//!
//! The crate is organized around six subsystems:
//!
//! - [`backend`]: a uniform model-capability interface (generation, K-sampling,
//!   embeddings, entailment, claim rating/judging/decomposition) with a
//!   deterministic mock implementation and a remote HTTP implementation.
//! - [`claims`]: claim extraction, canonicalization, and soft set agreement.
//! - [`detectors`]: six detection scorers plus baselines, score-direction
//!   correction, and the per-method forward-pass cost table.
//! - [`metrics`]: discrimination/calibration metrics, statistical tests,
//!   the composite quality score, Pareto frontier, and transfer analysis.
//! - [`router`]: adaptive detection routing driven by a logistic risk model.
//! - [`harness`]: dataset loading, the evaluation grid, persistence/resume,
//!   and report emission; the `halluscan` binary fronts it.
//!
//! All randomness flows from a single run seed; every derived seed is a pure
//! function of that seed plus stable identifiers, so identical inputs yield
//! byte-identical result trees.

pub mod backend;
pub mod claims;
pub mod detectors;
pub mod harness;
pub mod metrics;
pub mod retrieval;
pub mod router;

/// Derives a stable sub-seed from a run seed and a list of string parts.
///
/// The derivation is a SHA-256 digest, so it is identical across processes,
/// platforms, and runs; `DefaultHasher` offers no such guarantee.
#[must_use]
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update([0x1f]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is at least 8 bytes"))
}
