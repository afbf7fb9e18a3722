//! Execution of the (method, model, domain) configuration grid with
//! incremental persistence, resume, and the post-run routing phase.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    build_prompt, derive_label, load_dataset, Domain, HarnessError, ModelSpec, RunConfig,
    RoutingConfig, Sample,
};
use crate::backend::mock::MockBackend;
use crate::backend::remote::{RemoteBackend, RemoteConfig};
use crate::backend::{Backend, DecodingParams, Embedder};
use crate::claims::{extract_claims, ClaimSet};
use crate::detectors::{
    baseline_score, cluster_semantic, score_judge, score_nli, score_rav, score_sc, score_se,
    score_seme, CostTable, DetectionResult, Method,
};
use crate::derive_seed;
use crate::metrics::halluscore::{
    compute_fabrication_rate, compute_factual_error_rate, compute_semantic_coherence,
    halluscore, HalluScoreComponents, HalluScoreWeights,
};
use crate::metrics::{auroc, compute_eval_metrics, EvalMetrics, MetricsConfig, ScoredSet};
use crate::retrieval::{LocalCorpusRetriever, NullRetriever, Retriever};
use crate::router::{
    expected_cost, extract_features, route, train_risk_model, CostSummary, RouteThresholds,
};

// ── persisted row formats ──────────────────────────────────────────────────

/// One sample's outcome within a (method, model, domain) configuration.
/// `error` rows carry a marker and are skipped (and counted) in metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    /// True = hallucinated; absent when generation failed before labeling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Persisted metrics for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub method: Method,
    pub model: String,
    pub domain: Domain,
    pub n_samples: usize,
    pub n_failed: usize,
    /// Mean forward passes over scored samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cost: Option<f64>,
    pub metrics: EvalMetrics,
}

/// Composite quality-score row for one (model, domain, sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityOutcome {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factual_error_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_coherence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabrication_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halluscore: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Primary response text, persisted for the routing phase and audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub response: String,
}

/// Wall-clock stage timing; persisted under timings/ only, which is
/// excluded from determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimingRow {
    id: String,
    stage: String,
    micros: u128,
}

/// One adaptive-routing decision on a held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecisionRow {
    pub id: String,
    pub domain: Domain,
    pub p_risk: f64,
    pub chosen: Method,
    pub score: f64,
    pub cost: f64,
    pub label: bool,
}

/// Routing-phase summary for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub model: String,
    pub n_train: usize,
    pub n_eval: usize,
    /// Samples dropped because a routed method's score was missing.
    pub n_skipped: usize,
    pub fractions: BTreeMap<Method, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSummary>,
    /// Fraction-weighted mean of per-method AUROCs on the held-out portion;
    /// an upper-bound estimate, not a measured run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_auroc_estimate: Option<f64>,
}

/// What `run_grid` did, for CLI reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GridSummary {
    pub configs_written: usize,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub samples_scored: usize,
    pub samples_failed: usize,
    /// "model/domain: error" for aborted cells.
    pub aborted: Vec<String>,
    pub routed_models: usize,
}

// ── small IO helpers ───────────────────────────────────────────────────────

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

pub(crate) fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Config(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let mut text = String::new();
    for row in rows {
        text.push_str(
            &serde_json::to_string(row)
                .map_err(|e| HarnessError::Config(format!("serializing {}: {e}", path.display())))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

// ── path layout ────────────────────────────────────────────────────────────

pub(crate) fn config_dir(out: &Path, method: Method, model: &str, domain: Domain) -> PathBuf {
    out.join("results").join(method.name()).join(model).join(domain.name())
}

pub(crate) fn quality_path(out: &Path, model: &str, domain: Domain) -> PathBuf {
    out.join("quality").join(model).join(domain.name()).join("samples.jsonl")
}

pub(crate) fn responses_path(out: &Path, model: &str, domain: Domain) -> PathBuf {
    out.join("responses").join(model).join(domain.name()).join("responses.jsonl")
}

fn timings_path(out: &Path, model: &str, domain: Domain) -> PathBuf {
    out.join("timings").join(model).join(format!("{}.jsonl", domain.name()))
}

pub(crate) fn routing_dir(out: &Path, model: &str) -> PathBuf {
    out.join("routing").join(model)
}

// ── grid execution ─────────────────────────────────────────────────────────

struct Cell {
    model_index: usize,
    domain: Domain,
}

/// Per-sample state shared by every method within a cell.
struct SharedSample {
    sample: Sample,
    outcome: Result<SharedOutcome, String>,
}

struct SharedOutcome {
    response: String,
    label: bool,
    claims: ClaimSet,
    sampled: Vec<String>,
    sample_claims: Vec<ClaimSet>,
    quality: QualityOutcome,
}

/// Runs the configured grid. A cell is a (model, domain) pair whose response
/// generation is shared across methods; cells execute concurrently up to the
/// worker cap;
/// completed cells persist before the run advances, so an interrupted run
/// resumes by recomputing only incomplete cells. All derived seeds are
/// stable, making outputs independent of scheduling.
pub fn run_grid(config: &RunConfig) -> Result<GridSummary, HarnessError> {
    config.validate()?;
    let out = Path::new(&config.out_dir);
    let dataset = load_dataset(Path::new(&config.dataset))?;
    let mut by_domain: BTreeMap<Domain, Vec<Sample>> = BTreeMap::new();
    for sample in dataset {
        by_domain.entry(sample.domain).or_default().push(sample);
    }
    for domain in &config.domains {
        if !by_domain.contains_key(domain) {
            return Err(HarnessError::Config(format!(
                "dataset has no samples for configured domain {domain}"
            )));
        }
    }

    write_json_pretty(&out.join("run_config.json"), config)?;

    let mut backends: Vec<Result<Arc<dyn Backend>, String>> = Vec::new();
    for model in &config.models {
        backends.push(build_backend(model, config.seed).map_err(|e| e.to_string()));
    }
    let retrievers: Vec<Result<Arc<dyn Retriever>, String>> = config
        .models
        .iter()
        .zip(&backends)
        .map(|(_, backend)| match backend {
            Ok(b) => build_retriever(config, b.clone()).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        })
        .collect();

    let mut cells = Vec::new();
    let mut summary = GridSummary::default();
    for (model_index, model) in config.models.iter().enumerate() {
        for domain in &config.domains {
            if cell_complete(out, config, model.name(), *domain) {
                summary.cells_skipped += 1;
            } else {
                cells.push(Cell { model_index, domain: *domain });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<(usize, Result<CellSummary, String>)>> = Mutex::new(Vec::new());
    let workers = config.workers.min(cells.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(index) else { break };
                let model = &config.models[cell.model_index];
                let result = match (&backends[cell.model_index], &retrievers[cell.model_index]) {
                    (Ok(backend), Ok(retriever)) => run_cell(
                        config,
                        out,
                        model.name(),
                        backend.as_ref(),
                        retriever.as_ref(),
                        cell.domain,
                        &by_domain[&cell.domain],
                    )
                    .map_err(|e| e.to_string()),
                    (Err(e), _) | (_, Err(e)) => Err(e.clone()),
                };
                outcomes.lock().expect("collector").push((index, result));
            });
        }
    });

    let mut collected = outcomes.into_inner().expect("collector");
    collected.sort_by_key(|(index, _)| *index);
    for (index, outcome) in collected {
        let cell = &cells[index];
        let name = config.models[cell.model_index].name();
        match outcome {
            Ok(cell_summary) => {
                summary.cells_run += 1;
                summary.configs_written += config.methods.len();
                summary.samples_scored += cell_summary.scored;
                summary.samples_failed += cell_summary.failed;
            }
            Err(error) => {
                summary.aborted.push(format!("{name}/{}: {error}", cell.domain));
            }
        }
    }

    if let Some(routing) = &config.routing {
        if summary.aborted.is_empty() {
            for model in &config.models {
                run_routing(config, out, routing, model.name(), &by_domain)?;
                summary.routed_models += 1;
            }
        }
    }
    Ok(summary)
}

fn build_backend(model: &ModelSpec, seed: u64) -> Result<Arc<dyn Backend>, HarnessError> {
    match model {
        ModelSpec::Mock { name, fixtures_dir } => {
            let model_seed = derive_seed(seed, &["model", name]);
            let backend = match fixtures_dir {
                Some(dir) => MockBackend::from_dir(Path::new(dir), model_seed)?,
                None => MockBackend::new(model_seed),
            };
            Ok(Arc::new(backend))
        }
        ModelSpec::Remote { name, config } => {
            let remote = match config {
                Some(c) => c.clone(),
                None => RemoteConfig::from_env(name)?,
            };
            Ok(Arc::new(RemoteBackend::new(remote)?))
        }
    }
}

fn build_retriever(
    config: &RunConfig,
    backend: Arc<dyn Backend>,
) -> Result<Arc<dyn Retriever>, HarnessError> {
    match &config.rav_corpus {
        Some(dir) => {
            let embedder: Arc<dyn Embedder> = backend;
            Ok(Arc::new(LocalCorpusRetriever::from_dir(Path::new(dir), embedder)?))
        }
        None => Ok(Arc::new(NullRetriever)),
    }
}

/// A cell is complete when every per-method metrics file plus the shared
/// quality and response files exist.
fn cell_complete(out: &Path, config: &RunConfig, model: &str, domain: Domain) -> bool {
    config
        .methods
        .iter()
        .all(|m| config_dir(out, *m, model, domain).join("metrics.json").exists())
        && quality_path(out, model, domain).exists()
        && responses_path(out, model, domain).exists()
}

struct CellSummary {
    scored: usize,
    failed: usize,
}

fn run_cell(
    config: &RunConfig,
    out: &Path,
    model: &str,
    backend: &dyn Backend,
    retriever: &dyn Retriever,
    domain: Domain,
    samples: &[Sample],
) -> Result<CellSummary, HarnessError> {
    let needs_sampling = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::SelfConsistency | Method::SemanticEntropy));
    let mut timings: Vec<TimingRow> = Vec::new();
    let shared: Vec<SharedSample> = samples
        .iter()
        .map(|sample| SharedSample {
            sample: sample.clone(),
            outcome: prepare_sample(config, backend, retriever, sample, needs_sampling, &mut timings),
        })
        .collect();

    if !shared.is_empty() && shared.iter().all(|s| s.outcome.is_err()) {
        let first = shared[0].outcome.as_ref().err().expect("all failed").clone();
        return Err(HarnessError::Config(format!("every sample failed; first error: {first}")));
    }

    let labeled: Vec<bool> = shared
        .iter()
        .filter_map(|s| s.outcome.as_ref().ok().map(|o| o.label))
        .collect();
    let hallucinated = labeled.iter().filter(|&&l| l).count();
    let majority_hallucinated = hallucinated * 2 > labeled.len();

    let costs = config.cost_table();
    let mut failed_rows = 0usize;
    let mut scored_rows = 0usize;
    for method in &config.methods {
        let mut rows = Vec::with_capacity(shared.len());
        for entry in &shared {
            let started = Instant::now();
            let row = score_one(
                config,
                *method,
                model,
                backend,
                retriever,
                entry,
                majority_hallucinated,
                &costs,
            );
            timings.push(TimingRow {
                id: entry.sample.id.clone(),
                stage: method.name().to_string(),
                micros: started.elapsed().as_micros(),
            });
            if row.error.is_some() {
                failed_rows += 1;
            } else {
                scored_rows += 1;
            }
            rows.push(row);
        }

        let scores: Vec<f64> = rows.iter().filter_map(|r| r.corrected_score).collect();
        let labels: Vec<bool> =
            rows.iter().filter(|r| r.error.is_none()).filter_map(|r| r.label).collect();
        let set = ScoredSet::new(scores, labels)?;
        let metrics_config = MetricsConfig {
            seed: derive_seed(config.seed, &["metrics", method.name(), model, domain.name()]),
            ..config.metrics_config()
        };
        let costs_present: Vec<f64> = rows.iter().filter_map(|r| r.cost).collect();
        let mean_cost = (!costs_present.is_empty())
            .then(|| costs_present.iter().sum::<f64>() / costs_present.len() as f64);
        let report = ConfigReport {
            method: *method,
            model: model.to_string(),
            domain,
            n_samples: rows.len(),
            n_failed: rows.iter().filter(|r| r.error.is_some()).count(),
            mean_cost,
            metrics: compute_eval_metrics(&set, &metrics_config),
        };

        let dir = config_dir(out, *method, model, domain);
        write_jsonl(&dir.join("samples.jsonl"), &rows)?;
        write_json_pretty(&dir.join("metrics.json"), &report)?;
    }

    let responses: Vec<ResponseRecord> = shared
        .iter()
        .filter_map(|s| {
            s.outcome.as_ref().ok().map(|o| ResponseRecord {
                id: s.sample.id.clone(),
                response: o.response.clone(),
            })
        })
        .collect();
    write_jsonl(&responses_path(out, model, domain), &responses)?;

    let quality: Vec<QualityOutcome> = shared
        .iter()
        .map(|s| match &s.outcome {
            Ok(o) => o.quality.clone(),
            Err(e) => QualityOutcome {
                id: s.sample.id.clone(),
                label: None,
                factual_error_rate: None,
                semantic_coherence: None,
                fabrication_rate: None,
                halluscore: None,
                error: Some(e.clone()),
            },
        })
        .collect();
    write_jsonl(&quality_path(out, model, domain), &quality)?;
    write_jsonl(&timings_path(out, model, domain), &timings)?;

    Ok(CellSummary { scored: scored_rows, failed: failed_rows })
}

/// Generation, sampling, claim extraction, labeling, and quality scoring
/// for one sample. Any stage failure fails the whole sample.
fn prepare_sample(
    config: &RunConfig,
    backend: &dyn Backend,
    retriever: &dyn Retriever,
    sample: &Sample,
    needs_sampling: bool,
    timings: &mut Vec<TimingRow>,
) -> Result<SharedOutcome, String> {
    let prompt = build_prompt(sample);
    let mut time = |stage: &str, started: Instant| {
        timings.push(TimingRow {
            id: sample.id.clone(),
            stage: stage.to_string(),
            micros: started.elapsed().as_micros(),
        });
    };

    let started = Instant::now();
    let response = backend
        .generate(&prompt, &DecodingParams::greedy())
        .map_err(|e| format!("generate: {e}"))?;
    time("generate", started);

    let started = Instant::now();
    let sampled = if needs_sampling {
        backend
            .sample_k(&prompt, config.k, &DecodingParams::sampling())
            .map_err(|e| format!("sample_k: {e}"))?
    } else {
        Vec::new()
    };
    time("sample_k", started);

    let started = Instant::now();
    let claims = extract_claims(backend, &response, &sample.id);
    let sample_claims: Vec<ClaimSet> = sampled
        .iter()
        .enumerate()
        .map(|(i, text)| extract_claims(backend, text, &format!("{}#k{i}", sample.id)))
        .collect();
    time("claims", started);

    let label = derive_label(&response, sample);

    let started = Instant::now();
    let quality = quality_outcome(config, backend, retriever, sample, &response, &claims, label);
    time("quality", started);

    Ok(SharedOutcome { response, label, claims, sampled, sample_claims, quality })
}

fn quality_outcome(
    config: &RunConfig,
    backend: &dyn Backend,
    retriever: &dyn Retriever,
    sample: &Sample,
    response: &str,
    claims: &ClaimSet,
    label: bool,
) -> QualityOutcome {
    let mut outcome = QualityOutcome {
        id: sample.id.clone(),
        label: Some(label),
        factual_error_rate: None,
        semantic_coherence: None,
        fabrication_rate: None,
        halluscore: None,
        error: None,
    };
    let computed = (|| -> Result<(f64, f64, f64), crate::backend::BackendError> {
        let eps = compute_factual_error_rate(claims, &sample.gold, backend)?;
        let coherence = compute_semantic_coherence(response, backend)?;
        let fabrication = compute_fabrication_rate(
            claims,
            sample.context.as_deref(),
            retriever,
            backend,
            config.top_l,
        )?;
        Ok((eps, coherence.value, fabrication.value))
    })();
    match computed {
        Ok((eps, sigma, phi)) => {
            let components = HalluScoreComponents {
                factual_error_rate: eps,
                semantic_coherence: sigma,
                fabrication_rate: phi,
            };
            outcome.factual_error_rate = Some(eps);
            outcome.semantic_coherence = Some(sigma);
            outcome.fabrication_rate = Some(phi);
            outcome.halluscore = Some(halluscore(&components, &HalluScoreWeights::default()));
        }
        Err(e) => outcome.error = Some(format!("quality: {e}")),
    }
    outcome
}

#[allow(clippy::too_many_arguments)]
fn score_one(
    config: &RunConfig,
    method: Method,
    model: &str,
    backend: &dyn Backend,
    retriever: &dyn Retriever,
    entry: &SharedSample,
    majority_hallucinated: bool,
    costs: &CostTable,
) -> SampleOutcome {
    let sample = &entry.sample;
    let shared = match &entry.outcome {
        Ok(shared) => shared,
        Err(e) => {
            return SampleOutcome {
                id: sample.id.clone(),
                label: None,
                raw_score: None,
                corrected_score: None,
                cost: None,
                degenerate: false,
                error: Some(e.clone()),
            }
        }
    };
    let context = sample.context.as_deref().unwrap_or("");
    let result: Result<DetectionResult, crate::backend::BackendError> = match method {
        Method::SelfConsistency => {
            score_sc(&shared.sample_claims, backend, config.match_threshold)
        }
        Method::SelfEval => score_se(&sample.query, &shared.response, &shared.claims, backend),
        Method::SemanticEntropy => {
            cluster_semantic(&shared.sampled, backend).map(|c| score_seme(&c))
        }
        Method::Judge => score_judge(&sample.query, context, &shared.claims, backend),
        Method::Nli => score_nli(&sample.query, context, &shared.claims, backend, backend),
        Method::Rav => score_rav(&shared.claims, retriever, backend, config.top_l),
        Method::RandomBaseline | Method::AlwaysPositive | Method::MajorityClass => {
            let seed =
                derive_seed(config.seed, &["baseline", method.name(), model, &sample.id]);
            Ok(baseline_score(method, seed, majority_hallucinated))
        }
    };
    match result {
        Ok(mut detection) => {
            detection.reprice(costs);
            SampleOutcome {
                id: sample.id.clone(),
                label: Some(shared.label),
                raw_score: Some(detection.raw_score),
                corrected_score: Some(detection.corrected_score),
                cost: Some(detection.cost),
                degenerate: detection.diagnostics.degenerate,
                error: None,
            }
        }
        Err(e) => SampleOutcome {
            id: sample.id.clone(),
            label: Some(shared.label),
            raw_score: None,
            corrected_score: None,
            cost: None,
            degenerate: false,
            error: Some(format!("{method}: {e}")),
        },
    }
}

// ── routing phase ──────────────────────────────────────────────────────────

const ROUTED_METHODS: [Method; 3] = [Method::SelfEval, Method::SelfConsistency, Method::Nli];

/// Trains a risk model on 70% of a model's samples and routes the held-out
/// 30%, reading scores back from the persisted results so the phase is
/// independent of which cells were recomputed.
fn run_routing(
    config: &RunConfig,
    out: &Path,
    routing: &RoutingConfig,
    model: &str,
    by_domain: &BTreeMap<Domain, Vec<Sample>>,
) -> Result<(), HarnessError> {
    let thresholds =
        RouteThresholds { theta_high: routing.theta_high, theta_med: routing.theta_med };
    let costs = config.cost_table();

    struct Candidate {
        id: String,
        domain: Domain,
        features: crate::router::RouteFeatures,
        label: bool,
        scores: BTreeMap<Method, f64>,
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut skipped = 0usize;
    for domain in &config.domains {
        let responses: BTreeMap<String, String> =
            read_jsonl::<ResponseRecord>(&responses_path(out, model, *domain))?
                .into_iter()
                .map(|r| (r.id, r.response))
                .collect();
        let mut per_method: BTreeMap<Method, BTreeMap<String, SampleOutcome>> = BTreeMap::new();
        for method in ROUTED_METHODS {
            let rows: Vec<SampleOutcome> =
                read_jsonl(&config_dir(out, method, model, *domain).join("samples.jsonl"))?;
            per_method.insert(method, rows.into_iter().map(|r| (r.id.clone(), r)).collect());
        }
        for sample in &by_domain[domain] {
            let scores: Option<BTreeMap<Method, f64>> = ROUTED_METHODS
                .iter()
                .map(|m| {
                    per_method[m]
                        .get(&sample.id)
                        .and_then(|r| r.corrected_score)
                        .map(|s| (*m, s))
                })
                .collect();
            let response = responses.get(&sample.id);
            let label = per_method[&Method::SelfEval]
                .get(&sample.id)
                .and_then(|r| r.label);
            match (scores, response, label) {
                (Some(scores), Some(response), Some(label)) => candidates.push(Candidate {
                    id: sample.id.clone(),
                    domain: *domain,
                    features: extract_features(
                        &sample.query,
                        sample.context.as_deref(),
                        response,
                        *domain,
                    ),
                    label,
                    scores,
                }),
                _ => skipped += 1,
            }
        }
    }
    if candidates.is_empty() {
        return Err(HarnessError::Config(format!(
            "routing for model {model}: no scorable samples"
        )));
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, &["risk-split", model]));
    order.shuffle(&mut rng);
    let n_train = (candidates.len() * 7 / 10).max(1);
    let (train_idx, eval_idx) = order.split_at(n_train.min(candidates.len()));

    let examples: Vec<(crate::router::RouteFeatures, bool)> = train_idx
        .iter()
        .map(|&i| (candidates[i].features.clone(), candidates[i].label))
        .collect();
    let risk_model = train_risk_model(&examples, config.seed)?;

    let mut eval_sorted: Vec<&Candidate> = eval_idx.iter().map(|&i| &candidates[i]).collect();
    eval_sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut decisions = Vec::with_capacity(eval_sorted.len());
    let mut counts: BTreeMap<Method, usize> =
        ROUTED_METHODS.iter().map(|m| (*m, 0usize)).collect();
    for candidate in &eval_sorted {
        let p_risk = risk_model.predict(&candidate.features);
        let chosen = route(p_risk, routing.budget, &thresholds, &costs)?;
        *counts.entry(chosen).or_default() += 1;
        decisions.push(RouteDecisionRow {
            id: candidate.id.clone(),
            domain: candidate.domain,
            p_risk,
            chosen,
            score: candidate.scores[&chosen],
            cost: costs.forward_passes(chosen),
            label: candidate.label,
        });
    }

    let fractions: BTreeMap<Method, f64> = counts
        .iter()
        .map(|(m, c)| (*m, *c as f64 / decisions.len().max(1) as f64))
        .collect();
    let cost = (!decisions.is_empty()).then(|| expected_cost(&fractions, &costs));
    let eval_labels: Vec<bool> = eval_sorted.iter().map(|c| c.label).collect();
    let per_method_scores: BTreeMap<Method, Vec<f64>> = ROUTED_METHODS
        .iter()
        .map(|m| (*m, eval_sorted.iter().map(|c| c.scores[m]).collect()))
        .collect();
    let weighted_auroc_estimate = weighted_auroc(&fractions, &per_method_scores, &eval_labels);

    let dir = routing_dir(out, model);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    risk_model.save(&dir.join("risk_model.json"))?;
    write_jsonl(&dir.join("decisions.jsonl"), &decisions)?;
    write_json_pretty(
        &dir.join("cost_summary.json"),
        &RoutingReport {
            model: model.to_string(),
            n_train: train_idx.len(),
            n_eval: eval_sorted.len(),
            n_skipped: skipped,
            fractions,
            cost,
            weighted_auroc_estimate,
        },
    )?;
    Ok(())
}

/// Fraction-weighted mean of per-method AUROCs over the evaluation
/// portion; `None` when any positively weighted method is UNDEFINED.
fn weighted_auroc(
    fractions: &BTreeMap<Method, f64>,
    per_method_scores: &BTreeMap<Method, Vec<f64>>,
    labels: &[bool],
) -> Option<f64> {
    let mut total = 0.0;
    for (method, fraction) in fractions {
        if *fraction == 0.0 {
            continue;
        }
        let set = ScoredSet::new(per_method_scores[method].clone(), labels.to_vec()).ok()?;
        total += fraction * auroc(&set)?;
    }
    Some(total)
}
