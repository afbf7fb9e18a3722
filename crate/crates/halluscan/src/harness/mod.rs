//! Benchmark harness: dataset ingestion, hallucination-label derivation,
//! grid execution, and report emission.

pub mod grid;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::remote::RemoteConfig;
use crate::backend::BackendError;
use crate::detectors::{Method, DETECTORS};
use crate::metrics::MetricsError;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "HALLUSCAN_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset {path}: {detail}")]
    Dataset { path: String, detail: String },
    #[error("dataset {path} line {line}: {detail}")]
    DatasetLine { path: String, line: usize, detail: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no results found at {0}")]
    NoResults(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

// ── domains ────────────────────────────────────────────────────────────────

/// Benchmark domain tag.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Scientific,
    OpenDomain,
    Commonsense,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Scientific, Domain::OpenDomain, Domain::Commonsense];

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Domain::Scientific => "scientific",
            Domain::OpenDomain => "open_domain",
            Domain::Commonsense => "commonsense",
        }
    }

    /// Indicator vector in [`Domain::ALL`] order.
    #[must_use]
    pub fn onehot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        let index = Domain::ALL.iter().position(|d| *d == self).expect("domain in ALL");
        v[index] = 1.0;
        v
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown domain {s:?}; expected scientific, open_domain, or commonsense"))
    }
}

// ── samples ────────────────────────────────────────────────────────────────

/// One benchmark item. Free-text QA uses `gold` for label derivation;
/// multiple-choice items additionally carry `choices` and `answer_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
    pub domain: Domain,
}

impl Sample {
    #[must_use]
    pub fn is_multiple_choice(&self) -> bool {
        self.answer_key.is_some()
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.query.trim().is_empty() {
            return Err("empty query".into());
        }
        if !self.gold.iter().any(|g| !g.trim().is_empty()) {
            return Err("gold must contain at least one nonempty answer".into());
        }
        match (&self.choices, &self.answer_key) {
            (None, None) => Ok(()),
            (Some(_), None) => Err("choices given without answer_key".into()),
            (None, Some(_)) => Err("answer_key given without choices".into()),
            (Some(choices), Some(key)) => {
                if choices.is_empty() {
                    return Err("choices must be nonempty".into());
                }
                let letter = single_letter(key)
                    .ok_or_else(|| format!("answer_key must be a single letter, got {key:?}"))?;
                let index = (letter as u8 - b'A') as usize;
                if index >= choices.len() {
                    return Err(format!(
                        "answer_key {key:?} outside the {} available choices",
                        choices.len()
                    ));
                }
                Ok(())
            }
        }
    }
}

fn single_letter(text: &str) -> Option<char> {
    let trimmed = text.trim();
    let mut chars = trimmed.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

/// Loads a JSONL dataset, one [`Sample`] per nonblank line. Schema
/// violations abort with the 1-based line number; duplicate ids and empty
/// files are errors.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = index + 1;
        let line_err = |detail: String| HarnessError::DatasetLine {
            path: display.clone(),
            line: line_no,
            detail,
        };
        let sample: Sample =
            serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        sample.validate().map_err(line_err)?;
        if !seen.insert(sample.id.clone()) {
            return Err(line_err(format!("duplicate sample id {:?}", sample.id)));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(HarnessError::Dataset { path: display, detail: "empty dataset".into() });
    }
    Ok(samples)
}

/// The prompt sent to the model: optional context, the query, and lettered
/// choices for multiple-choice items.
#[must_use]
pub fn build_prompt(sample: &Sample) -> String {
    let mut prompt = String::new();
    if let Some(context) = &sample.context {
        prompt.push_str(context);
        prompt.push_str("\n\n");
    }
    prompt.push_str(&sample.query);
    if let Some(choices) = &sample.choices {
        for (i, choice) in choices.iter().enumerate() {
            prompt.push('\n');
            prompt.push((b'A' + i as u8) as char);
            prompt.push_str(". ");
            prompt.push_str(choice);
        }
    }
    prompt
}

// ── label derivation ───────────────────────────────────────────────────────

/// Lowercases, replaces punctuation with spaces, drops the articles
/// a/an/the, and collapses whitespace.
#[must_use]
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// First response token that is a single letter naming one of `n_choices`,
/// case-insensitive, with surrounding punctuation stripped.
#[must_use]
pub fn extract_choice_letter(response: &str, n_choices: usize) -> Option<char> {
    let last = (b'A' + (n_choices.min(26).max(1) - 1) as u8) as char;
    response
        .split_whitespace()
        .filter_map(|token| single_letter(token.trim_matches(|c: char| !c.is_alphanumeric())))
        .find(|letter| ('A'..=last).contains(letter))
}

/// True when the response is hallucinated. Free-text items match by
/// word-boundary containment of any normalized gold answer; multiple-choice
/// items compare the extracted letter with the key (no extractable letter
/// counts as hallucinated).
#[must_use]
pub fn derive_label(response: &str, sample: &Sample) -> bool {
    if let (Some(choices), Some(key)) = (&sample.choices, &sample.answer_key) {
        let expected = single_letter(key);
        let extracted = extract_choice_letter(response, choices.len());
        return match (extracted, expected) {
            (Some(found), Some(answer)) => found != answer,
            _ => true,
        };
    }
    let response_padded = format!(" {} ", normalize_answer(response));
    let correct = sample.gold.iter().any(|gold| {
        let normalized = normalize_answer(gold);
        !normalized.is_empty() && response_padded.contains(&format!(" {normalized} "))
    });
    !correct
}

// ── run configuration ──────────────────────────────────────────────────────

/// One model under test: a seeded mock profile or a remote endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ModelSpec {
    Mock {
        name: String,
        /// Directory of fixture tables; synthetic defaults when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fixtures_dir: Option<String>,
    },
    Remote {
        name: String,
        /// Full endpoint configuration; environment-derived when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<RemoteConfig>,
    },
}

impl ModelSpec {
    #[must_use]
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Mock { name, .. } | ModelSpec::Remote { name, .. } => name,
        }
    }
}

/// Adaptive-routing settings; presence enables routing after the grid run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    #[serde(default = "default_theta_high")]
    pub theta_high: f64,
    #[serde(default = "default_theta_med")]
    pub theta_med: f64,
    #[serde(default = "default_budget")]
    pub budget: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self { theta_high: 0.7, theta_med: 0.4, budget: 5.0 }
    }
}

fn default_theta_high() -> f64 {
    0.7
}

fn default_theta_med() -> f64 {
    0.4
}

fn default_budget() -> f64 {
    5.0
}

fn default_methods() -> Vec<Method> {
    DETECTORS.to_vec()
}

fn default_models() -> Vec<ModelSpec> {
    vec![ModelSpec::Mock { name: "mock-a".into(), fixtures_dir: None }]
}

fn default_domains() -> Vec<Domain> {
    Domain::ALL.to_vec()
}

fn default_k() -> usize {
    5
}

fn default_seed() -> u64 {
    42
}

fn default_match_threshold() -> f64 {
    crate::claims::DEFAULT_MATCH_THRESHOLD
}

fn default_bins() -> usize {
    10
}

fn default_resamples() -> usize {
    10_000
}

fn default_workers() -> usize {
    4
}

fn default_top_l() -> usize {
    3
}

/// Full grid-run configuration; every field has a CLI flag counterpart and
/// flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub out_dir: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_domains")]
    pub domains: Vec<Domain>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_match_threshold")]
    pub match_threshold: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Passages retrieved per claim for the retrieval-augmented scorer.
    #[serde(default = "default_top_l")]
    pub top_l: usize,
    /// Directory of .txt passages backing retrieval; empty corpus when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rav_corpus: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_overrides: BTreeMap<Method, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingConfig>,
}

impl RunConfig {
    /// A minimal configuration over one synthetic mock model.
    #[must_use]
    pub fn new(dataset: impl Into<String>, out_dir: impl Into<String>) -> Self {
        Self {
            dataset: dataset.into(),
            out_dir: out_dir.into(),
            methods: default_methods(),
            models: default_models(),
            domains: default_domains(),
            k: default_k(),
            seed: default_seed(),
            match_threshold: default_match_threshold(),
            bins: default_bins(),
            bootstrap_resamples: default_resamples(),
            workers: default_workers(),
            top_l: default_top_l(),
            rav_corpus: None,
            cost_overrides: BTreeMap::new(),
            routing: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the `HALLUSCAN_SEED` override when set.
    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.seed = value.parse().map_err(|_| {
                HarnessError::Config(format!("{SEED_ENV} must be an integer, got {value:?}"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |detail: String| Err(HarnessError::Config(detail));
        if self.dataset.trim().is_empty() {
            return fail("dataset path is empty".into());
        }
        if self.out_dir.trim().is_empty() {
            return fail("output directory is empty".into());
        }
        if self.methods.is_empty() {
            return fail("methods must be nonempty".into());
        }
        if has_duplicates(self.methods.iter()) {
            return fail("duplicate methods".into());
        }
        if self.models.is_empty() {
            return fail("models must be nonempty".into());
        }
        for model in &self.models {
            let name = model.name();
            let path_safe = !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !path_safe {
                return fail(format!(
                    "model name {name:?} must be nonempty and use only [A-Za-z0-9._-]"
                ));
            }
        }
        if has_duplicates(self.models.iter().map(ModelSpec::name)) {
            return fail("duplicate model names".into());
        }
        if self.domains.is_empty() {
            return fail("domains must be nonempty".into());
        }
        if has_duplicates(self.domains.iter()) {
            return fail("duplicate domains".into());
        }
        let needs_sampling = self
            .methods
            .iter()
            .any(|m| matches!(m, Method::SelfConsistency | Method::SemanticEntropy));
        if self.k < 2 && needs_sampling {
            return fail(format!(
                "k = {} but sampling-based methods need k >= 2",
                self.k
            ));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.match_threshold > 0.0 && self.match_threshold <= 1.0) {
            return fail(format!("match_threshold out of (0,1]: {}", self.match_threshold));
        }
        if self.bins == 0 {
            return fail("bins must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if self.top_l == 0 {
            return fail("top_l must be at least 1".into());
        }
        if let Some(routing) = &self.routing {
            crate::router::RouteThresholds {
                theta_high: routing.theta_high,
                theta_med: routing.theta_med,
            }
            .validate()?;
            if routing.budget < 0.0 {
                return fail(format!("routing budget must be nonnegative, got {}", routing.budget));
            }
            for required in [Method::SelfEval, Method::SelfConsistency, Method::Nli] {
                if !self.methods.contains(&required) {
                    return fail(format!(
                        "routing requires method {required} to be part of the run"
                    ));
                }
            }
        }
        Ok(())
    }

    /// The effective per-method cost table.
    #[must_use]
    pub fn cost_table(&self) -> crate::detectors::CostTable {
        let mut table = crate::detectors::CostTable::default();
        for (method, passes) in &self.cost_overrides {
            table = table.with_override(*method, *passes);
        }
        table
    }

    /// Metric knobs bundled for the metrics module.
    #[must_use]
    pub fn metrics_config(&self) -> crate::metrics::MetricsConfig {
        crate::metrics::MetricsConfig {
            seed: self.seed,
            bins: self.bins,
            bootstrap_resamples: self.bootstrap_resamples,
        }
    }
}

fn has_duplicates<T: Ord>(items: impl Iterator<Item = T>) -> bool {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item) {
            return true;
        }
    }
    false
}
