//! Report emission over persisted run results: rankings, pooled-vs-macro
//! method summaries, calibration bins, the cost-quality frontier, domain
//! transfer, pairwise statistical tests, score octiles, and composite
//! quality-score validation.
//!
//! Every emitter reads only the persisted files, so reports can be
//! regenerated at any time and are byte-identical for identical results.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::grid::{read_json, read_jsonl, write_json_pretty, ConfigReport, QualityOutcome, SampleOutcome};
use super::{Domain, HarnessError, RunConfig};
use crate::derive_seed;
use crate::detectors::{Method, DETECTORS};
use crate::metrics::pareto::{pareto_frontier, ParetoPoint};
use crate::metrics::stats::{bootstrap_ci, cohens_d, pearson_r, wilcoxon_signed_rank};
use crate::metrics::transfer::transfer_matrix;
use crate::metrics::{aggregate, ece, reliability_bins, ConfigScores, MethodAggregate, MetricsConfig, ScoredSet};

/// What was written, for CLI reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub configs: usize,
    pub methods: usize,
    pub reports_dir: String,
    pub files: Vec<String>,
}

/// Composite quality-score validation over a seeded 70/30 split. The quality
/// proxy is the binary correctness label (1 = not hallucinated); `pearson_r`
/// correlates the composite score with that proxy on the held-out portion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityValidation {
    pub n_total: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub proxy: String,
    /// `None` (UNDEFINED) when the test portion has fewer than two rows or
    /// zero variance on either side.
    pub pearson_r: Option<f64>,
}

// ── loading ────────────────────────────────────────────────────────────────

struct LoadedConfig {
    method: Method,
    model: String,
    domain: Domain,
    report: ConfigReport,
    rows: Vec<SampleOutcome>,
    set: ScoredSet,
}

struct Results {
    configs: Vec<LoadedConfig>,
    metrics: MetricsConfig,
}

fn sorted_subdirs(path: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let entries = std::fs::read_dir(path)
        .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry =
            entry.map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
        if entry.path().is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Scored rows only: failed samples carry an error marker and are excluded.
fn scored_set(rows: &[SampleOutcome]) -> Result<ScoredSet, HarnessError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for row in rows {
        if row.error.is_none() {
            if let (Some(score), Some(label)) = (row.corrected_score, row.label) {
                scores.push(score);
                labels.push(label);
            }
        }
    }
    Ok(ScoredSet::new(scores, labels)?)
}

fn load_results(out: &Path) -> Result<Results, HarnessError> {
    let root = out.join("results");
    if !root.is_dir() {
        return Err(HarnessError::NoResults(out.display().to_string()));
    }
    let mut configs = Vec::new();
    for (method_name, method_dir) in sorted_subdirs(&root)? {
        let Ok(method) = method_name.parse::<Method>() else { continue };
        for (model, model_dir) in sorted_subdirs(&method_dir)? {
            for (domain_name, domain_dir) in sorted_subdirs(&model_dir)? {
                let Ok(domain) = domain_name.parse::<Domain>() else { continue };
                let metrics_path = domain_dir.join("metrics.json");
                if !metrics_path.exists() {
                    continue;
                }
                let report: ConfigReport = read_json(&metrics_path)?;
                let rows: Vec<SampleOutcome> = read_jsonl(&domain_dir.join("samples.jsonl"))?;
                let set = scored_set(&rows)?;
                configs.push(LoadedConfig { method, model: model.clone(), domain, report, rows, set });
            }
        }
    }
    if configs.is_empty() {
        return Err(HarnessError::NoResults(out.display().to_string()));
    }
    configs.sort_by(|a, b| {
        (a.method, &a.model, a.domain).cmp(&(b.method, &b.model, b.domain))
    });
    let config_path = out.join("run_config.json");
    let metrics = if config_path.exists() {
        read_json::<RunConfig>(&config_path)?.metrics_config()
    } else {
        MetricsConfig::default()
    };
    Ok(Results { configs, metrics })
}

// ── formatting helpers ─────────────────────────────────────────────────────

/// UNDEFINED stays visible in CSV cells rather than collapsing to a number.
fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(|| "UNDEFINED".to_string(), |v| v.to_string())
}

fn fmt_opt_bool(value: Option<bool>) -> String {
    value.map_or_else(|| "UNDEFINED".to_string(), |v| v.to_string())
}

fn push_row(text: &mut String, fields: &[String]) {
    text.push_str(&fields.join(","));
    text.push('\n');
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| HarnessError::Io { path: parent.display().to_string(), source: e })?;
    }
    std::fs::write(path, text)
        .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })
}

// ── per-report builders ────────────────────────────────────────────────────

/// Defined rows sorted descending by AUROC with a 1-based rank column;
/// UNDEFINED rows land in the companion listing.
fn ranking_csvs(results: &Results) -> (String, String) {
    let mut defined: Vec<&LoadedConfig> =
        results.configs.iter().filter(|c| c.report.metrics.auroc.is_some()).collect();
    defined.sort_by(|a, b| {
        b.report
            .metrics
            .auroc
            .partial_cmp(&a.report.metrics.auroc)
            .expect("finite AUROC")
            .then_with(|| (a.method, &a.model, a.domain).cmp(&(b.method, &b.model, b.domain)))
    });
    let mut ranking = String::from("rank,method,model,domain,auroc,f1,precision,recall,ece,n,n_positive,n_negative\n");
    for (rank, config) in defined.iter().enumerate() {
        let m = &config.report.metrics;
        push_row(
            &mut ranking,
            &[
                (rank + 1).to_string(),
                config.method.name().to_string(),
                config.model.clone(),
                config.domain.name().to_string(),
                fmt_opt(m.auroc),
                m.f1.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                fmt_opt(m.ece),
                m.n.to_string(),
                m.n_positive.to_string(),
                m.n_negative.to_string(),
            ],
        );
    }
    let mut undefined = String::from("method,model,domain,n,n_positive,n_negative\n");
    for config in results.configs.iter().filter(|c| c.report.metrics.auroc.is_none()) {
        let m = &config.report.metrics;
        push_row(
            &mut undefined,
            &[
                config.method.name().to_string(),
                config.model.clone(),
                config.domain.name().to_string(),
                m.n.to_string(),
                m.n_positive.to_string(),
                m.n_negative.to_string(),
            ],
        );
    }
    (ranking, undefined)
}

/// Mean forward passes per scored response, pooled over a method's rows.
fn pooled_mean_costs(results: &Results) -> BTreeMap<Method, Option<f64>> {
    let mut sums: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for config in &results.configs {
        let entry = sums.entry(config.method).or_insert((0.0, 0));
        for row in &config.rows {
            if let Some(cost) = row.cost {
                entry.0 += cost;
                entry.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(method, (total, count))| {
            (method, (count > 0).then(|| total / count as f64))
        })
        .collect()
}

fn method_summary_csv(
    aggregates: &[MethodAggregate],
    mean_costs: &BTreeMap<Method, Option<f64>>,
    bins: usize,
) -> String {
    let mut text = String::from(
        "method,pooled_auroc,macro_auroc,defined_configs,undefined_configs,pooled_ece,mean_cost\n",
    );
    for agg in aggregates {
        push_row(
            &mut text,
            &[
                agg.method.name().to_string(),
                fmt_opt(agg.pooled_auroc),
                fmt_opt(agg.macro_auroc),
                agg.defined_configs.to_string(),
                agg.undefined_configs.to_string(),
                fmt_opt(ece(&agg.pooled, bins)),
                fmt_opt(mean_costs.get(&agg.method).copied().flatten()),
            ],
        );
    }
    text
}

fn reliability_csv(aggregates: &[MethodAggregate], bins: usize) -> String {
    let mut text = String::from("method,bin_lo,bin_hi,count,mean_score,frac_positive\n");
    for agg in aggregates {
        for bin in reliability_bins(&agg.pooled, bins) {
            push_row(
                &mut text,
                &[
                    agg.method.name().to_string(),
                    bin.lo.to_string(),
                    bin.hi.to_string(),
                    bin.count.to_string(),
                    fmt_opt(bin.mean_score),
                    fmt_opt(bin.frac_positive),
                ],
            );
        }
    }
    text
}

/// One point per method with both axes defined; points with UNDEFINED pooled
/// AUROC cannot be placed and are omitted.
fn pareto_points(
    aggregates: &[MethodAggregate],
    mean_costs: &BTreeMap<Method, Option<f64>>,
) -> Vec<ParetoPoint> {
    let mut points = Vec::new();
    for agg in aggregates {
        let (Some(quality), Some(cost)) =
            (agg.pooled_auroc, mean_costs.get(&agg.method).copied().flatten())
        else {
            continue;
        };
        points.push(ParetoPoint { label: agg.method.name().to_string(), cost, quality });
    }
    points
}

fn pareto_csv(points: &[ParetoPoint]) -> String {
    let frontier: BTreeSet<String> =
        pareto_frontier(points).into_iter().map(|p| p.label).collect();
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .expect("finite costs")
            .then(b.quality.partial_cmp(&a.quality).expect("finite qualities"))
            .then(a.label.cmp(&b.label))
    });
    let mut text = String::from("method,cost,quality,on_frontier\n");
    for point in sorted {
        let on_frontier = frontier.contains(&point.label);
        push_row(
            &mut text,
            &[
                point.label.clone(),
                point.cost.to_string(),
                point.quality.to_string(),
                on_frontier.to_string(),
            ],
        );
    }
    text
}

/// Per-method transfer over domain sets pooled across models; methods with
/// fewer than two nonempty domains have no transfer rows.
fn transfer_csv(results: &Results) -> String {
    let mut per_method: BTreeMap<Method, BTreeMap<String, ScoredSet>> = BTreeMap::new();
    for config in &results.configs {
        if config.set.is_empty() {
            continue;
        }
        per_method
            .entry(config.method)
            .or_default()
            .entry(config.domain.name().to_string())
            .or_default()
            .extend_from(&config.set);
    }
    let mut text = String::from("method,source,target,threshold,f1\n");
    for (method, domains) in &per_method {
        if domains.len() < 2 {
            continue;
        }
        let matrix = transfer_matrix(domains);
        for cell in &matrix.cells {
            push_row(
                &mut text,
                &[
                    method.name().to_string(),
                    cell.source.clone(),
                    cell.target.clone(),
                    fmt_opt(cell.threshold),
                    cell.f1.to_string(),
                ],
            );
        }
    }
    text
}

/// Pairwise method comparisons over the per-configuration AUROCs defined for
/// both methods: mean difference, effect size, a bootstrap interval of the
/// mean difference (significant when it excludes zero), and a signed-rank
/// p-value when enough informative pairs exist.
fn stat_tests_csv(aggregates: &[MethodAggregate], metrics: &MetricsConfig) -> String {
    let mut defined: BTreeMap<Method, BTreeMap<(String, String), f64>> = BTreeMap::new();
    for agg in aggregates {
        if !DETECTORS.contains(&agg.method) {
            continue;
        }
        let values = agg
            .per_config
            .iter()
            .filter_map(|(key, value)| value.map(|v| (key.clone(), v)))
            .collect();
        defined.insert(agg.method, values);
    }
    let present: Vec<Method> =
        DETECTORS.into_iter().filter(|m| defined.contains_key(m)).collect();

    let mut text = String::from(
        "comparison,n,delta_auroc,cohens_d,ci_low,ci_high,significant,wilcoxon_p\n",
    );
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            let shared: Vec<(f64, f64)> = defined[&a]
                .iter()
                .filter_map(|(key, &va)| defined[&b].get(key).map(|&vb| (va, vb)))
                .collect();
            let n = shared.len();
            let va: Vec<f64> = shared.iter().map(|(x, _)| *x).collect();
            let vb: Vec<f64> = shared.iter().map(|(_, y)| *y).collect();
            let delta = (n > 0)
                .then(|| va.iter().sum::<f64>() / n as f64 - vb.iter().sum::<f64>() / n as f64);
            let d = cohens_d(&va, &vb);
            let diffs: Vec<f64> = shared.iter().map(|(x, y)| x - y).collect();
            let seed = derive_seed(metrics.seed, &["stat", a.name(), b.name()]);
            let ci = bootstrap_ci(
                &diffs,
                |resample| {
                    (!resample.is_empty())
                        .then(|| resample.iter().sum::<f64>() / resample.len() as f64)
                },
                metrics.bootstrap_resamples,
                seed,
            );
            let wilcoxon = wilcoxon_signed_rank(&va, &vb).ok();
            push_row(
                &mut text,
                &[
                    format!("{}_vs_{}", a.name(), b.name()),
                    n.to_string(),
                    fmt_opt(delta),
                    fmt_opt(d),
                    fmt_opt(ci.map(|c| c.low)),
                    fmt_opt(ci.map(|c| c.high)),
                    fmt_opt_bool(ci.map(|c| c.excludes_zero())),
                    fmt_opt(wilcoxon.map(|w| w.p_value)),
                ],
            );
        }
    }
    text
}

fn domain_breakdown_csv(results: &Results) -> String {
    struct Cell {
        pooled: ScoredSet,
        per_model: Vec<Option<f64>>,
    }
    let mut cells: BTreeMap<(Method, Domain), Cell> = BTreeMap::new();
    for config in &results.configs {
        let cell = cells
            .entry((config.method, config.domain))
            .or_insert_with(|| Cell { pooled: ScoredSet::default(), per_model: Vec::new() });
        cell.pooled.extend_from(&config.set);
        cell.per_model.push(config.report.metrics.auroc);
    }
    let mut text = String::from(
        "method,domain,pooled_auroc,macro_auroc,defined_models,undefined_models,n,hallucination_rate\n",
    );
    for ((method, domain), cell) in &cells {
        let defined: Vec<f64> = cell.per_model.iter().flatten().copied().collect();
        let macro_auroc = (!defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let n = cell.pooled.len();
        let rate = (n > 0).then(|| cell.pooled.n_positive() as f64 / n as f64);
        push_row(
            &mut text,
            &[
                method.name().to_string(),
                domain.name().to_string(),
                fmt_opt(crate::metrics::auroc(&cell.pooled)),
                fmt_opt(macro_auroc),
                defined.len().to_string(),
                (cell.per_model.len() - defined.len()).to_string(),
                n.to_string(),
                fmt_opt(rate),
            ],
        );
    }
    text
}

/// Global equal-sized octiles by corrected score, per method: bucket `b`
/// covers sorted indices `[b*n/8, (b+1)*n/8)`. Confidence is `1 - score`.
fn octiles_csv(results: &Results) -> String {
    let mut pooled: BTreeMap<Method, Vec<(f64, bool, String, Domain, String)>> = BTreeMap::new();
    for config in &results.configs {
        let rows = pooled.entry(config.method).or_default();
        for row in &config.rows {
            if row.error.is_none() {
                if let (Some(score), Some(label)) = (row.corrected_score, row.label) {
                    rows.push((
                        score,
                        label,
                        config.model.clone(),
                        config.domain,
                        row.id.clone(),
                    ));
                }
            }
        }
    }
    let mut text =
        String::from("method,octile,count,mean_score,mean_confidence,hallucination_rate\n");
    for (method, mut rows) in pooled {
        rows.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| (&a.2, a.3, &a.4).cmp(&(&b.2, b.3, &b.4)))
        });
        let n = rows.len();
        for bucket in 0..8 {
            let lo = bucket * n / 8;
            let hi = (bucket + 1) * n / 8;
            let slice = &rows[lo..hi];
            let count = slice.len();
            let mean_score = (count > 0)
                .then(|| slice.iter().map(|r| r.0).sum::<f64>() / count as f64);
            let rate = (count > 0).then(|| {
                slice.iter().filter(|r| r.1).count() as f64 / count as f64
            });
            push_row(
                &mut text,
                &[
                    method.name().to_string(),
                    (bucket + 1).to_string(),
                    count.to_string(),
                    fmt_opt(mean_score),
                    fmt_opt(mean_score.map(|s| 1.0 - s)),
                    fmt_opt(rate),
                ],
            );
        }
    }
    text
}

/// Reads the persisted composite quality rows across all models and domains.
fn quality_rows(out: &Path) -> Result<Vec<(String, Domain, QualityOutcome)>, HarnessError> {
    let root = out.join("quality");
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (model, model_dir) in sorted_subdirs(&root)? {
        for (domain_name, domain_dir) in sorted_subdirs(&model_dir)? {
            let Ok(domain) = domain_name.parse::<Domain>() else { continue };
            let path = domain_dir.join("samples.jsonl");
            if !path.exists() {
                continue;
            }
            for row in read_jsonl::<QualityOutcome>(&path)? {
                rows.push((model.clone(), domain, row));
            }
        }
    }
    Ok(rows)
}

fn quality_validation(out: &Path, seed: u64) -> Result<QualityValidation, HarnessError> {
    let mut usable: Vec<(f64, f64)> = Vec::new();
    let mut rows = quality_rows(out)?;
    rows.sort_by(|a, b| (&a.0, a.1, &a.2.id).cmp(&(&b.0, b.1, &b.2.id)));
    for (_, _, row) in &rows {
        if row.error.is_none() {
            if let (Some(score), Some(label)) = (row.halluscore, row.label) {
                usable.push((score, if label { 0.0 } else { 1.0 }));
            }
        }
    }
    let n = usable.len();
    if n == 0 {
        return Ok(QualityValidation {
            n_total: 0,
            n_train: 0,
            n_test: 0,
            proxy: "binary correctness from derived labels".into(),
            pearson_r: None,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &["halluscore-split"]));
    order.shuffle(&mut rng);
    let n_train = (n * 7 / 10).max(1);
    let test: Vec<usize> = order[n_train.min(n)..].to_vec();
    let x: Vec<f64> = test.iter().map(|&i| usable[i].0).collect();
    let y: Vec<f64> = test.iter().map(|&i| usable[i].1).collect();
    let pearson = pearson_r(&x, &y)?;
    Ok(QualityValidation {
        n_total: n,
        n_train: n_train.min(n),
        n_test: test.len(),
        proxy: "binary correctness from derived labels".into(),
        pearson_r: pearson,
    })
}

// ── entry points ───────────────────────────────────────────────────────────

fn config_scores(results: &Results) -> Vec<ConfigScores> {
    results
        .configs
        .iter()
        .map(|c| ConfigScores {
            method: c.method,
            model: c.model.clone(),
            domain: c.domain.name().to_string(),
            set: c.set.clone(),
        })
        .collect()
}

/// Regenerates every report file under `<out>/reports/` from the persisted
/// results tree. Errors with "no results found" when nothing is persisted.
pub fn emit_reports(out: &Path) -> Result<ReportSummary, HarnessError> {
    let results = load_results(out)?;
    let aggregates = aggregate(&config_scores(&results));
    let mean_costs = pooled_mean_costs(&results);
    let reports = out.join("reports");
    let mut files = Vec::new();

    let config_reports: Vec<&ConfigReport> = results.configs.iter().map(|c| &c.report).collect();
    write_json_pretty(&reports.join("per_config_metrics.json"), &config_reports)?;
    files.push("per_config_metrics.json".to_string());

    let (ranking, undefined) = ranking_csvs(&results);
    let csvs: Vec<(&str, String)> = vec![
        ("ranking.csv", ranking),
        ("ranking_undefined.csv", undefined),
        (
            "method_summary.csv",
            method_summary_csv(&aggregates, &mean_costs, results.metrics.bins),
        ),
        ("reliability_bins.csv", reliability_csv(&aggregates, results.metrics.bins)),
        ("pareto.csv", pareto_csv(&pareto_points(&aggregates, &mean_costs))),
        ("transfer_matrix.csv", transfer_csv(&results)),
        ("stat_tests.csv", stat_tests_csv(&aggregates, &results.metrics)),
        ("domain_breakdown.csv", domain_breakdown_csv(&results)),
        ("octiles.csv", octiles_csv(&results)),
    ];
    for (name, text) in csvs {
        write_text(&reports.join(name), &text)?;
        files.push(name.to_string());
    }

    let validation = quality_validation(out, results.metrics.seed)?;
    write_json_pretty(&reports.join("halluscore_validation.json"), &validation)?;
    files.push("halluscore_validation.json".to_string());

    let methods: BTreeSet<Method> = results.configs.iter().map(|c| c.method).collect();
    Ok(ReportSummary {
        configs: results.configs.len(),
        methods: methods.len(),
        reports_dir: reports.display().to_string(),
        files,
    })
}

/// Writes only `reports/transfer_matrix.csv`; returns the written path.
pub fn emit_transfer(out: &Path) -> Result<PathBuf, HarnessError> {
    let results = load_results(out)?;
    let path = out.join("reports").join("transfer_matrix.csv");
    write_text(&path, &transfer_csv(&results))?;
    Ok(path)
}

/// Writes only `reports/pareto.csv`; returns the written path.
pub fn emit_pareto(out: &Path) -> Result<PathBuf, HarnessError> {
    let results = load_results(out)?;
    let aggregates = aggregate(&config_scores(&results));
    let mean_costs = pooled_mean_costs(&results);
    let path = out.join("reports").join("pareto.csv");
    write_text(&path, &pareto_csv(&pareto_points(&aggregates, &mean_costs)))?;
    Ok(path)
}
