//! Evaluation metrics over scored, labeled response sets.
//!
//! The positive class is "hallucinated". AUROC is undefined on single-class
//! sets and that undefinedness is carried as `None` end to end; it is never
//! coerced to a number.

pub mod halluscore;
pub mod pareto;
pub mod stats;
pub mod transfer;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::Method;
use stats::BootstrapCi;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("score out of range [0, 1]: {0}")]
    ScoreOutOfRange(String),
    #[error("too few informative pairs: got {got}, need {need}")]
    TooFewPairs { got: usize, need: usize },
}

/// Corrected scores with hallucination labels (true = hallucinated).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch { left: scores.len(), right: labels.len() });
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s)) {
            return Err(MetricsError::ScoreOutOfRange(bad.to_string()));
        }
        Ok(Self { scores, labels })
    }

    #[must_use]
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[must_use]
    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    #[must_use]
    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    #[must_use]
    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// Appends another set's observations.
    pub fn extend_from(&mut self, other: &ScoredSet) {
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
    }

    fn subset(&self, indices: &[usize]) -> ScoredSet {
        ScoredSet {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

// ── AUROC ──────────────────────────────────────────────────────────────────

/// Mann-Whitney AUROC via midranks. Ties contribute half weight. Returns
/// `None` (UNDEFINED) when either class is absent.
#[must_use]
pub fn auroc(set: &ScoredSet) -> Option<f64> {
    let n_pos = set.n_positive();
    let n_neg = set.n_negative();
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        set.scores[i].partial_cmp(&set.scores[j]).expect("scores are finite")
    });
    // Sum the midranks of the positive class. Midranks are half-integers and
    // every partial sum stays far below 2^53, so this arithmetic is exact.
    let mut positive_rank_sum = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if set.labels[idx] {
                positive_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = positive_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

// ── threshold selection and F1 ─────────────────────────────────────────────

/// F1-oriented operating point chosen on a validation half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    /// Chosen threshold; `None` (UNDEFINED) when the validation half was
    /// single-class, in which case 0.5 was applied.
    pub threshold: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Splits the set 50/50 with a seeded shuffle (validation takes the first
/// floor(n/2) shuffled indices), sweeps every unique validation score as a
/// `score >= t` threshold, keeps the F1-maximizing one (ties break toward
/// the lower threshold), and reports precision/recall/F1 on the held-out
/// half. A single-class or empty validation half leaves the threshold
/// UNDEFINED and evaluates at 0.5.
#[must_use]
pub fn optimal_f1(set: &ScoredSet, seed: u64) -> ThresholdMetrics {
    let n = set.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let validation = set.subset(&indices[..n / 2]);
    let evaluation = set.subset(&indices[n / 2..]);

    let threshold = fit_f1_threshold(&validation);
    let applied = threshold.unwrap_or(0.5);
    let (f1, precision, recall) = f1_at(&evaluation, applied);
    ThresholdMetrics { threshold, f1, precision, recall }
}

/// Exhaustive F1-optimal `score >= t` threshold over a set's own unique
/// score values; `None` when the set is single-class or empty.
#[must_use]
pub fn fit_f1_threshold(set: &ScoredSet) -> Option<f64> {
    if set.n_positive() == 0 || set.n_negative() == 0 {
        return None;
    }
    let mut candidates: Vec<f64> = set.scores.clone();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    candidates.dedup();
    let mut best_threshold = candidates[0];
    let mut best_f1 = -1.0;
    for &t in &candidates {
        let (f1, _, _) = f1_at(set, t);
        // Strict improvement keeps the lowest threshold on F1 ties.
        if f1 > best_f1 {
            best_f1 = f1;
            best_threshold = t;
        }
    }
    Some(best_threshold)
}

/// (F1, precision, recall) of the `score >= threshold` classifier, all zero
/// when undefined by absence of predictions or positives.
#[must_use]
pub fn f1_at(set: &ScoredSet, threshold: f64) -> (f64, f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (score, &label) in set.scores.iter().zip(&set.labels) {
        let predicted = *score >= threshold;
        match (predicted, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    (f1, precision, recall)
}

// ── calibration ────────────────────────────────────────────────────────────

/// One equal-width reliability bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean score in the bin; `None` for empty bins.
    pub mean_score: Option<f64>,
    /// Fraction of positive labels in the bin; `None` for empty bins.
    pub frac_positive: Option<f64>,
}

/// Equal-width reliability bins over [0, 1]; the last bin is right-closed
/// (`score == 1.0` lands in the top bin).
#[must_use]
pub fn reliability_bins(set: &ScoredSet, bins: usize) -> Vec<ReliabilityBin> {
    assert!(bins > 0, "need at least one bin");
    let mut counts = vec![0usize; bins];
    let mut score_sums = vec![0.0f64; bins];
    let mut positives = vec![0usize; bins];
    for (score, &label) in set.scores.iter().zip(&set.labels) {
        let index = ((score * bins as f64).floor() as usize).min(bins - 1);
        counts[index] += 1;
        score_sums[index] += score;
        positives[index] += usize::from(label);
    }
    (0..bins)
        .map(|b| ReliabilityBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count: counts[b],
            mean_score: (counts[b] > 0).then(|| score_sums[b] / counts[b] as f64),
            frac_positive: (counts[b] > 0).then(|| positives[b] as f64 / counts[b] as f64),
        })
        .collect()
}

/// Expected calibration error over equal-width bins: the count-weighted mean
/// absolute gap between each bin's mean score and its positive fraction.
/// `None` on an empty set.
#[must_use]
pub fn ece(set: &ScoredSet, bins: usize) -> Option<f64> {
    if set.is_empty() {
        return None;
    }
    let n = set.len() as f64;
    let total = reliability_bins(set, bins)
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            let gap = (b.frac_positive.expect("non-empty bin")
                - b.mean_score.expect("non-empty bin"))
            .abs();
            b.count as f64 / n * gap
        })
        .sum();
    Some(total)
}

// ── per-configuration metrics ──────────────────────────────────────────────

/// Metric bundle computed for one (method, model, domain) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    /// `None` means UNDEFINED (single-class configuration).
    pub auroc: Option<f64>,
    /// Case-resampling bootstrap interval for the AUROC.
    pub auroc_ci: Option<BootstrapCi>,
    pub threshold: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub ece: Option<f64>,
}

/// Knobs shared by metric computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub seed: u64,
    pub bins: usize,
    pub bootstrap_resamples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { seed: 42, bins: 10, bootstrap_resamples: 10_000 }
    }
}

/// Computes the full per-configuration bundle.
#[must_use]
pub fn compute_eval_metrics(set: &ScoredSet, config: &MetricsConfig) -> EvalMetrics {
    let auroc_value = auroc(set);
    let auroc_ci = if auroc_value.is_some() {
        let pairs: Vec<(f64, bool)> =
            set.scores.iter().copied().zip(set.labels.iter().copied()).collect();
        stats::bootstrap_ci(
            &pairs,
            |resample| {
                let scores = resample.iter().map(|(s, _)| *s).collect();
                let labels = resample.iter().map(|(_, l)| *l).collect();
                auroc(&ScoredSet { scores, labels })
            },
            config.bootstrap_resamples,
            config.seed,
        )
    } else {
        None
    };
    let threshold_metrics = optimal_f1(set, config.seed);
    EvalMetrics {
        n: set.len(),
        n_positive: set.n_positive(),
        n_negative: set.n_negative(),
        auroc: auroc_value,
        auroc_ci,
        threshold: threshold_metrics.threshold,
        f1: threshold_metrics.f1,
        precision: threshold_metrics.precision,
        recall: threshold_metrics.recall,
        ece: ece(set, config.bins),
    }
}

// ── aggregation ────────────────────────────────────────────────────────────

/// One configuration's scored set, keyed for aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScores {
    pub method: Method,
    pub model: String,
    pub domain: String,
    pub set: ScoredSet,
}

/// Pooled and macro views of one method across configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    /// AUROC over the union of all samples.
    pub pooled_auroc: Option<f64>,
    /// Unweighted mean of the defined per-configuration AUROCs.
    pub macro_auroc: Option<f64>,
    pub defined_configs: usize,
    /// Configurations whose AUROC was UNDEFINED, excluded from the macro
    /// mean.
    pub undefined_configs: usize,
    /// Per-configuration AUROCs as ((model, domain), value).
    pub per_config: Vec<((String, String), Option<f64>)>,
    /// The pooled observations, for downstream calibration and Pareto use.
    pub pooled: ScoredSet,
}

/// Groups configurations by method and computes pooled and macro AUROC.
/// Pooling concatenates samples in the given configuration order; the macro
/// mean skips UNDEFINED configurations and counts them.
#[must_use]
pub fn aggregate(configs: &[ConfigScores]) -> Vec<MethodAggregate> {
    let mut grouped: BTreeMap<Method, Vec<&ConfigScores>> = BTreeMap::new();
    for config in configs {
        grouped.entry(config.method).or_default().push(config);
    }
    grouped
        .into_iter()
        .map(|(method, group)| {
            let mut pooled = ScoredSet::default();
            let mut per_config = Vec::with_capacity(group.len());
            let mut defined = Vec::new();
            for config in &group {
                pooled.extend_from(&config.set);
                let value = auroc(&config.set);
                if let Some(v) = value {
                    defined.push(v);
                }
                per_config.push(((config.model.clone(), config.domain.clone()), value));
            }
            let macro_auroc = if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            };
            MethodAggregate {
                method,
                pooled_auroc: auroc(&pooled),
                macro_auroc,
                defined_configs: defined.len(),
                undefined_configs: per_config.len() - defined.len(),
                per_config,
                pooled,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn set(scores: &[f64], labels: &[bool]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// O(n^2) pair-counting AUROC oracle: ties count half.
    fn auroc_oracle(set: &ScoredSet) -> Option<f64> {
        let positives: Vec<f64> = set
            .scores()
            .iter()
            .zip(set.labels())
            .filter(|(_, &l)| l)
            .map(|(s, _)| *s)
            .collect();
        let negatives: Vec<f64> = set
            .scores()
            .iter()
            .zip(set.labels())
            .filter(|(_, &l)| !l)
            .map(|(s, _)| *s)
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for p in &positives {
            for n in &negatives {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (positives.len() * negatives.len()) as f64)
    }

    #[test]
    fn scored_set_validates_inputs() {
        assert!(ScoredSet::new(vec![0.5], vec![true, false]).is_err());
        assert!(ScoredSet::new(vec![1.5], vec![true]).is_err());
        assert!(ScoredSet::new(vec![f64::NAN], vec![true]).is_err());
        assert!(ScoredSet::new(vec![0.0, 1.0], vec![true, false]).is_ok());
    }

    #[test]
    fn auroc_boundary_cases() {
        let perfect = set(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(auroc(&perfect), Some(1.0));
        let reversed = set(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]);
        assert_eq!(auroc(&reversed), Some(0.0));
        let all_ties = set(&[0.5, 0.5, 0.5, 0.5], &[true, true, false, false]);
        assert_eq!(auroc(&all_ties), Some(0.5));
    }

    #[test]
    fn auroc_single_class_is_undefined_not_zero() {
        let single = set(&[0.9, 0.1], &[true, true]);
        assert_eq!(auroc(&single), None);
        let empty = ScoredSet::default();
        assert_eq!(auroc(&empty), None);
    }

    #[test]
    fn auroc_matches_pair_counting_oracle_with_ties() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(2..120);
            // Coarse grid injects plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let s = ScoredSet::new(scores, labels).unwrap();
            match (auroc(&s), auroc_oracle(&s)) {
                (None, None) => {}
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
                (a, b) => panic!("definedness mismatch: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn ece_hand_fixture_is_one_quarter() {
        // Two bins in play: the 0.9 bin holds labels {1, 0} (gap 0.4), the
        // 0.1 bin holds labels {0, 0} (gap 0.1); each bin weighs 1/2.
        let s = set(&[0.9, 0.9, 0.1, 0.1], &[true, false, false, false]);
        let value = ece(&s, 10).unwrap();
        assert!((value - 0.25).abs() < 1e-12, "ece = {value}");
    }

    #[test]
    fn ece_perfectly_calibrated_fixture_is_exactly_zero() {
        // Dyadic scores make every intermediate step exact: bins at 0.25 and
        // 0.75 each contain exactly that fraction of positives.
        let s = set(
            &[0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75],
            &[true, false, false, false, true, true, true, false],
        );
        assert_eq!(ece(&s, 10), Some(0.0));
        assert_eq!(ece(&ScoredSet::default(), 10), None);
    }

    #[test]
    fn ece_full_scores_land_in_the_top_bin() {
        let s = set(&[1.0, 1.0], &[true, true]);
        assert_eq!(ece(&s, 10), Some(0.0));
        let bins = reliability_bins(&s, 10);
        assert_eq!(bins[9].count, 2);
        assert_eq!(bins[9].frac_positive, Some(1.0));
        assert!(bins[..9].iter().all(|b| b.count == 0 && b.mean_score.is_none()));
    }

    #[test]
    fn reliability_bins_cover_unit_interval() {
        let s = set(&[0.05, 0.15, 0.95], &[false, true, true]);
        let bins = reliability_bins(&s, 10);
        assert_eq!(bins.len(), 10);
        assert_eq!(bins[0].lo, 0.0);
        assert_eq!(bins[9].hi, 1.0);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 3);
    }

    #[test]
    fn optimal_f1_separable_data_reaches_one() {
        // Two score levels keep the boundary candidate present in every
        // split, so the validation-fit threshold is exact on the held-out
        // half too.
        let n = 40;
        let scores: Vec<f64> = (0..n).map(|i| if i < 20 { 0.8 } else { 0.2 }).collect();
        let labels: Vec<bool> = (0..n).map(|i| i < 20).collect();
        let s = ScoredSet::new(scores, labels).unwrap();
        let m = optimal_f1(&s, 42);
        assert_eq!(m.threshold, Some(0.8));
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn f1_ties_break_toward_the_lower_threshold() {
        // Any threshold in {0.4, 0.6} yields the same validation F1; the
        // sweep must keep 0.4. Full-set fit isolates the tie-break rule.
        let s = set(&[0.2, 0.4, 0.6, 0.9], &[false, true, true, true]);
        let t = fit_f1_threshold(&s).unwrap();
        assert_eq!(t, 0.4);
    }

    #[test]
    fn single_class_validation_leaves_threshold_undefined() {
        // All labels positive: any split is single-class.
        let s = set(&[0.9, 0.8, 0.7, 0.6], &[true, true, true, true]);
        let m = optimal_f1(&s, 42);
        assert_eq!(m.threshold, None);
        // Applied default 0.5: everything >= 0.5 is predicted positive.
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn eval_metrics_bundle_is_complete_and_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = scores.iter().map(|s| *s > 0.45).collect();
        let s = ScoredSet::new(scores, labels).unwrap();
        let config = MetricsConfig { seed: 42, bins: 10, bootstrap_resamples: 200 };
        let a = compute_eval_metrics(&s, &config);
        let b = compute_eval_metrics(&s, &config);
        assert_eq!(a, b);
        assert!(a.auroc.unwrap() > 0.9);
        let ci = a.auroc_ci.unwrap();
        assert!(ci.low <= a.auroc.unwrap() && a.auroc.unwrap() <= ci.high);
        assert_eq!(a.n, 60);
    }

    #[test]
    fn aggregate_pools_and_excludes_undefined_configs() {
        let definable = ConfigScores {
            method: Method::SelfConsistency,
            model: "m1".into(),
            domain: "scientific".into(),
            set: set(&[0.9, 0.1], &[true, false]),
        };
        let single_class = ConfigScores {
            method: Method::SelfConsistency,
            model: "m1".into(),
            domain: "commonsense".into(),
            set: set(&[0.4, 0.6], &[false, false]),
        };
        let aggregates = aggregate(&[definable.clone(), single_class]);
        assert_eq!(aggregates.len(), 1);
        let agg = &aggregates[0];
        assert_eq!(agg.defined_configs, 1);
        assert_eq!(agg.undefined_configs, 1);
        assert_eq!(agg.macro_auroc, Some(1.0));
        // Pooled mixes all four samples; both classes present, so defined.
        assert_eq!(agg.pooled.len(), 4);
        assert!(agg.pooled_auroc.is_some());
        assert_eq!(agg.per_config.len(), 2);
        assert_eq!(agg.per_config[1].1, None);
    }

    #[test]
    fn pooled_and_macro_can_disagree_on_ranking() {
        // Method A wins both configurations (macro), but config sizes and
        // score offsets make method B win the pooled union.
        let a1 = set(
            &[0.60, 0.55, 0.50, 0.45],
            &[true, true, false, false],
        );
        let a2 = set(
            &[0.95, 0.90, 0.85, 0.80, 0.94, 0.89, 0.84, 0.79],
            &[true, true, true, true, false, false, false, false],
        );
        let b1 = set(
            &[0.60, 0.20, 0.50, 0.45],
            &[true, true, false, false],
        );
        let b2 = set(
            &[0.95, 0.90, 0.85, 0.80, 0.30, 0.29, 0.28, 0.27],
            &[true, true, true, true, false, false, false, false],
        );
        let configs = vec![
            ConfigScores { method: Method::SelfEval, model: "m".into(), domain: "d1".into(), set: a1 },
            ConfigScores { method: Method::SelfEval, model: "m".into(), domain: "d2".into(), set: a2 },
            ConfigScores { method: Method::Nli, model: "m".into(), domain: "d1".into(), set: b1 },
            ConfigScores { method: Method::Nli, model: "m".into(), domain: "d2".into(), set: b2 },
        ];
        let aggs = aggregate(&configs);
        let se = aggs.iter().find(|a| a.method == Method::SelfEval).unwrap();
        let nli = aggs.iter().find(|a| a.method == Method::Nli).unwrap();
        assert!(se.macro_auroc.unwrap() > nli.macro_auroc.unwrap());
        assert!(se.pooled_auroc.unwrap() < nli.pooled_auroc.unwrap());
    }
}
