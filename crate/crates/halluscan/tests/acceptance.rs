//! Acceptance gate: thirteen end-to-end criteria covering the metric
//! implementations, the detectors' score conventions, routing economics, the
//! grid harness, and the shipped statistical fixture. Each test prints one
//! `criterion NN <name>: PASS|FAIL` line.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{csv_rows, grid_config, write_grid_fixture};
use halluscan::backend::mock::MockFixtures;
use halluscan::detectors::{
    correct_direction, score_seme, CostTable, Method, SemanticClustering, DETECTORS,
};
use halluscan::harness::grid::run_grid;
use halluscan::harness::report::emit_reports;
use halluscan::harness::{Domain, RoutingConfig};
use halluscan::metrics::halluscore::{halluscore, HalluScoreComponents, HalluScoreWeights};
use halluscan::metrics::pareto::{pareto_frontier, ParetoPoint};
use halluscan::metrics::stats::{bootstrap_ci, cohens_d, wilcoxon_signed_rank};
use halluscan::metrics::transfer::transfer_matrix;
use halluscan::metrics::{auroc, ece, ScoredSet};
use halluscan::router::{expected_cost, route, simulate_uniform_risk, RouteThresholds};

fn criterion<F>(number: usize, name: &str, body: F)
where
    F: FnOnce() + std::panic::UnwindSafe,
{
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("criterion {number:>2} {name}: PASS"),
        Err(payload) => {
            println!("criterion {number:>2} {name}: FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

fn set(scores: Vec<f64>, labels: Vec<bool>) -> ScoredSet {
    ScoredSet::new(scores, labels).expect("valid fixture")
}

// ── 1: AUROC vs. the O(n²) all-pairs oracle ────────────────────────────────

fn oracle_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> =
        scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut favorable = 0.0f64;
    for p in &pos {
        for n in &neg {
            if p > n {
                favorable += 1.0;
            } else if p == n {
                favorable += 0.5;
            }
        }
    }
    Some(favorable / (pos.len() as f64 * neg.len() as f64))
}

#[test]
fn criterion_01_auroc_oracle_equivalence() {
    criterion(1, "auroc matches the all-pairs oracle on 100 tied fixtures", || {
        let started = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        for case in 0..100 {
            let n = rng.gen_range(2..=200);
            let mut scores: Vec<f64> = Vec::with_capacity(n);
            let mut labels: Vec<bool> = Vec::with_capacity(n);
            for _ in 0..n {
                // coarse grid forces plenty of ties
                scores.push(f64::from(rng.gen_range(0..=20)) / 20.0);
                labels.push(rng.gen_bool(0.5));
            }
            // guarantee both classes
            labels[0] = true;
            labels[n - 1] = false;
            let fast = auroc(&set(scores.clone(), labels.clone())).expect("two classes");
            let slow = oracle_auroc(&scores, &labels).expect("two classes");
            assert!(
                (fast - slow).abs() <= 1e-9,
                "case {case}: midrank {fast} vs oracle {slow}"
            );
        }
        assert!(started.elapsed().as_secs_f64() < 5.0, "oracle comparison too slow");
    });
}

// ── 2: corrected-score AUROC is exactly 1 − raw AUROC ──────────────────────

#[test]
fn criterion_02_inversion_identity() {
    criterion(2, "corrected AUROC equals 1 - raw AUROC for inverted methods", || {
        let inverted: Vec<Method> = DETECTORS.iter().copied().filter(|m| m.is_inverted()).collect();
        assert_eq!(
            inverted,
            vec![Method::SemanticEntropy, Method::Judge, Method::Rav],
            "inverted set"
        );
        let mut rng = ChaCha20Rng::seed_from_u64(202);
        // class counts whose product is a power of two make every AUROC a
        // dyadic rational, so the identity holds under f64 `==`
        for &(n_pos, n_neg) in &[(8usize, 8usize), (4, 16), (16, 4), (32, 32), (2, 8)] {
            let n = n_pos + n_neg;
            let scores: Vec<f64> =
                (0..n).map(|_| f64::from(rng.gen_range(0..=1024)) / 1024.0).collect();
            let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
            let raw_auroc = auroc(&set(scores.clone(), labels.clone())).unwrap();
            for &method in &inverted {
                let corrected: Vec<f64> =
                    scores.iter().map(|&s| correct_direction(method, s)).collect();
                assert!(corrected.iter().zip(&scores).all(|(c, s)| *c == 1.0 - *s));
                let corrected_auroc = auroc(&set(corrected, labels.clone())).unwrap();
                assert_eq!(
                    corrected_auroc,
                    1.0 - raw_auroc,
                    "{} on {n_pos}/{n_neg}",
                    method.name()
                );
            }
        }
        // arbitrary class counts: the identity still holds to 1e-15
        for _ in 0..20 {
            let n_pos = rng.gen_range(1..=9usize);
            let n_neg = rng.gen_range(1..=11usize);
            let n = n_pos + n_neg;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
            let raw_auroc = auroc(&set(scores.clone(), labels.clone())).unwrap();
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let corrected_auroc = auroc(&set(flipped, labels.clone())).unwrap();
            assert!((corrected_auroc - (1.0 - raw_auroc)).abs() <= 1e-15);
        }
        // non-inverted methods pass scores through untouched
        for method in [Method::SelfConsistency, Method::SelfEval, Method::Nli] {
            assert_eq!(correct_direction(method, 0.37), 0.37);
        }
    });
}

// ── 3: expected calibration error hand fixtures ─────────────────────────────

#[test]
fn criterion_03_ece_hand_fixture() {
    criterion(3, "ece hand fixture 0.25 and calibrated fixture 0.0", || {
        let fixture = set(vec![0.9, 0.9, 0.1, 0.1], vec![true, false, false, false]);
        let value = ece(&fixture, 10).expect("nonempty");
        assert!((value - 0.25).abs() <= 1e-12, "got {value}");

        // every occupied bin has mean score == empirical frequency
        let calibrated = set(
            vec![0.25, 0.25, 0.25, 0.25, 0.5, 0.5, 0.5, 0.5],
            vec![true, false, false, false, true, true, false, false],
        );
        assert_eq!(ece(&calibrated, 10), Some(0.0));
    });
}

// ── 4: semantic entropy boundary values ─────────────────────────────────────

#[test]
fn criterion_04_semantic_entropy_boundaries() {
    criterion(4, "semantic entropy 0 / 1 / 0.4182 boundary values", || {
        let one_cluster =
            SemanticClustering { clusters: vec![vec![0, 1, 2, 3, 4]], total: 5 };
        assert_eq!(score_seme(&one_cluster).raw_score, 0.0);

        let singletons = SemanticClustering {
            clusters: (0..5).map(|i| vec![i]).collect(),
            total: 5,
        };
        assert!((score_seme(&singletons).raw_score - 1.0).abs() <= 1e-12);

        let three_two =
            SemanticClustering { clusters: vec![vec![0, 1, 2], vec![3, 4]], total: 5 };
        let raw = score_seme(&three_two).raw_score;
        assert!((raw - 0.4182).abs() <= 1e-4, "got {raw}");
    });
}

// ── 5: composite quality score ──────────────────────────────────────────────

#[test]
fn criterion_05_halluscore_values_and_monotonicity() {
    criterion(5, "halluscore boundary values and 1000-point monotonicity", || {
        let weights = HalluScoreWeights::default();
        let score = |e: f64, s: f64, f: f64| {
            halluscore(
                &HalluScoreComponents {
                    factual_error_rate: e,
                    semantic_coherence: s,
                    fabrication_rate: f,
                },
                &weights,
            )
        };
        assert_eq!(score(0.0, 1.0, 0.0), 1.0);
        assert_eq!(score(1.0, 0.7, 0.2), 0.0);
        assert_eq!(score(0.3, 0.0, 0.2), 0.0);
        assert_eq!(score(0.3, 0.7, 1.0), 0.0);
        assert!((score(0.5, 0.8, 0.2) - 0.663).abs() <= 1e-3);

        let mut rng = ChaCha20Rng::seed_from_u64(505);
        for _ in 0..1000 {
            let e = rng.gen::<f64>();
            let s = rng.gen::<f64>();
            let f = rng.gen::<f64>();
            let delta = rng.gen::<f64>() * 0.2 + 1e-6;
            let base = score(e, s, f);
            assert!(score((e + delta).min(1.0), s, f) <= base + 1e-12);
            assert!(score(e, (s + delta).min(1.0), f) + 1e-12 >= base);
            assert!(score(e, s, (f + delta).min(1.0)) <= base + 1e-12);
        }
    });
}

// ── 6: routing cost identity ────────────────────────────────────────────────

#[test]
fn criterion_06_routing_cost_identity() {
    criterion(6, "routing mix costs 3.0 passes, 5/3 reduction", || {
        let fractions: BTreeMap<Method, f64> = [
            (Method::Nli, 0.40),
            (Method::SelfConsistency, 0.25),
            (Method::SelfEval, 0.35),
        ]
        .into_iter()
        .collect();
        let summary = expected_cost(&fractions, &CostTable::default());
        assert!((summary.mean_passes - 3.0).abs() <= 1e-12, "got {}", summary.mean_passes);
        let reduction = summary.reduction_vs_uniform_se.expect("nonzero mean");
        assert!((reduction - 5.0 / 3.0).abs() <= 1e-12, "got {reduction}");
    });
}

// ── 7: routing branch structure and uniform-risk fractions ──────────────────

#[test]
fn criterion_07_routing_threshold_behavior() {
    criterion(7, "routing branch sweep and 30/30/40 uniform fractions", || {
        let thresholds = RouteThresholds::default();
        let costs = CostTable::default();
        for i in 0..=100 {
            let p = f64::from(i) / 100.0;
            let expected = if p > 0.7 {
                Method::SelfEval
            } else if p > 0.4 {
                Method::SelfConsistency
            } else {
                Method::Nli
            };
            assert_eq!(route(p, 5.0, &thresholds, &costs).unwrap(), expected, "p = {p}");
        }
        // over budget, the high-risk branch falls back to self-consistency
        assert_eq!(route(0.9, 3.0, &thresholds, &costs).unwrap(), Method::SelfConsistency);

        let fractions = simulate_uniform_risk(10_000, 42, &thresholds, 5.0, &costs).unwrap();
        assert!((fractions[&Method::SelfEval] - 0.30).abs() <= 0.02);
        assert!((fractions[&Method::SelfConsistency] - 0.30).abs() <= 0.02);
        assert!((fractions[&Method::Nli] - 0.40).abs() <= 0.02);
    });
}

// ── 8: cost-quality frontier fixture ────────────────────────────────────────

#[test]
fn criterion_08_pareto_fixture() {
    criterion(8, "pareto frontier keeps (0,0.584) and (5,0.688) only", || {
        let points = vec![
            ParetoPoint { label: "nli".into(), cost: 0.0, quality: 0.584 },
            ParetoPoint { label: "se".into(), cost: 5.0, quality: 0.688 },
            ParetoPoint { label: "sc".into(), cost: 5.0, quality: 0.638 },
        ];
        let frontier = pareto_frontier(&points);
        let labels: Vec<&str> = frontier.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels, vec!["nli", "se"]);
    });
}

// ── 9: grid enumeration and undefined-AUROC exclusion ───────────────────────

#[test]
fn criterion_09_grid_structure_and_undefined_exclusion() {
    criterion(9, "72-config grid with one all-correct domain left undefined", || {
        let dir = tempfile::tempdir().unwrap();
        // scientific and open_domain get 2 correct + 2 hallucinated samples;
        // commonsense is engineered with zero hallucinations
        let fixture = write_grid_fixture(
            dir.path(),
            &[Domain::Scientific, Domain::OpenDomain],
            2,
            2,
        );
        let extra = write_grid_fixture(
            &dir.path().join("zero"),
            &[Domain::Commonsense],
            4,
            0,
        );
        // merge the all-correct domain into one dataset and fixture dir
        let mut combined = fs::read_to_string(&fixture.dataset).unwrap();
        combined.push_str(&fs::read_to_string(&extra.dataset).unwrap());
        fs::write(&fixture.dataset, combined).unwrap();
        let mut base = MockFixtures::load(&fixture.mock_dir).unwrap();
        let zero = MockFixtures::load(&extra.mock_dir).unwrap();
        base.generate.extend(zero.generate);
        base.samples.extend(zero.samples);
        base.decompose.extend(zero.decompose);
        base.save(&fixture.mock_dir).unwrap();

        let out = dir.path().join("out");
        let config = grid_config(&fixture, &out, &["m1", "m2", "m3", "m4"]);
        let summary = run_grid(&config).unwrap();
        assert_eq!(summary.configs_written, 72, "6 methods x 4 models x 3 domains");
        assert!(summary.aborted.is_empty());

        emit_reports(&out).unwrap();
        let metrics: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(out.join("reports/per_config_metrics.json")).unwrap(),
        )
        .unwrap();
        let configs = metrics.as_array().unwrap();
        assert_eq!(configs.len(), 72);
        let undefined: Vec<&serde_json::Value> = configs
            .iter()
            .filter(|c| c["metrics"]["auroc"].is_null())
            .collect();
        assert_eq!(undefined.len(), 24, "6 methods x 4 models in the all-correct domain");
        assert!(undefined.iter().all(|c| c["domain"] == "commonsense"));

        // macro aggregation reports the exclusions per method
        for row in csv_rows(&out.join("reports/method_summary.csv")) {
            assert_eq!(row[3], "8", "defined configs for {}", row[0]);
            assert_eq!(row[4], "4", "undefined configs for {}", row[0]);
        }
        assert_eq!(csv_rows(&out.join("reports/ranking_undefined.csv")).len(), 24);
        assert_eq!(csv_rows(&out.join("reports/ranking.csv")).len(), 48);
    });
}

// ── 10: end-to-end mock discrimination ──────────────────────────────────────

#[test]
fn criterion_10_end_to_end_mock_discrimination() {
    criterion(10, "self-consistency separates a 60-sample mock set", || {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_grid_fixture(dir.path(), &Domain::ALL, 10, 10);
        let out = dir.path().join("out");
        let mut config = grid_config(&fixture, &out, &["m1"]);
        config.methods = vec![Method::SelfConsistency];
        let summary = run_grid(&config).unwrap();
        assert_eq!(summary.samples_scored, 60);
        assert!(summary.aborted.is_empty());

        emit_reports(&out).unwrap();
        let rows = csv_rows(&out.join("reports/method_summary.csv"));
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][0], "sc");
        let pooled: f64 = rows[0][1].parse().expect("pooled auroc defined");
        assert!(pooled >= 0.95, "pooled auroc {pooled}");
        assert!(started.elapsed().as_secs_f64() < 60.0);
    });
}

// ── 11: archived statistical-table regression ───────────────────────────────

#[test]
fn criterion_11_statistical_test_regression() {
    criterion(11, "archived auroc table reproduces d=+1.27 and flags", || {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/stat_tests/per_config_auroc.json");
        let table: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let vector = |name: &str| -> Vec<f64> {
            table["auroc"][name]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect()
        };
        let se = vector("se");
        let sc = vector("sc");
        let nli = vector("nli");
        let seme = vector("seme");
        assert_eq!(table["configs"].as_array().unwrap().len(), 9);
        assert!([&se, &sc, &nli, &seme].iter().all(|v| v.len() == 9));

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let d = cohens_d(&se, &nli).expect("defined");
        assert!((d - 1.27).abs() <= 0.02, "cohens d {d}");

        let diffs = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x - y).collect()
        };
        for (other, delta, expect_significant) in
            [(&sc, -0.059, false), (&nli, 0.144, true), (&seme, 0.096, false)]
        {
            let paired = diffs(&se, other);
            assert!((mean(&paired) - delta).abs() <= 1e-9, "delta {}", mean(&paired));
            let ci = bootstrap_ci(
                &paired,
                |draw: &[f64]| Some(draw.iter().sum::<f64>() / draw.len() as f64),
                10_000,
                42,
            )
            .expect("defined");
            assert_eq!(
                ci.excludes_zero(),
                expect_significant,
                "CI {} for delta {delta}",
                ci.display()
            );
        }

        // six uniformly positive paired differences: exact two-sided p
        let before = vec![0.61, 0.58, 0.64, 0.57, 0.66, 0.60];
        let after: Vec<f64> =
            before.iter().zip([0.01, 0.02, 0.03, 0.04, 0.05, 0.06]).map(|(b, d)| b + d).collect();
        let outcome = wilcoxon_signed_rank(&after, &before).unwrap();
        assert!(outcome.exact);
        assert_eq!(outcome.n, 6);
        assert_eq!(outcome.p_value, 0.03125);
    });
}

// ── 12: byte-identical reruns ───────────────────────────────────────────────

/// Relative path -> file bytes for every run output that promises
/// determinism (everything except wall-clock `timings/` and the config
/// snapshot, which embeds the differing output path).
fn deterministic_outputs(out: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, into);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                into.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut files = BTreeMap::new();
    for sub in ["results", "reports", "routing", "quality", "responses"] {
        let dir = out.join(sub);
        if dir.is_dir() {
            walk(&dir, out, &mut files);
        }
    }
    assert!(!files.is_empty(), "no outputs under {}", out.display());
    files
}

#[test]
fn criterion_12_determinism_across_runs() {
    criterion(12, "two seed-42 grid runs are byte-identical", || {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_grid_fixture(dir.path(), &Domain::ALL, 2, 2);
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(run);
            let mut config = grid_config(&fixture, &out, &["m1", "m2"]);
            config.routing = Some(RoutingConfig::default());
            let summary = run_grid(&config).unwrap();
            assert!(summary.aborted.is_empty());
            emit_reports(&out).unwrap();
            outputs.push(deterministic_outputs(&out));
        }
        let (a, b) = (&outputs[0], &outputs[1]);
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "file sets differ"
        );
        for (path, bytes) in a {
            assert_eq!(bytes, &b[path], "bytes differ: {path}");
        }
    });
}

// ── 13: transfer asymmetry across base rates ────────────────────────────────

#[test]
fn criterion_13_transfer_base_rate_asymmetry() {
    criterion(13, "high->high transfer beats any->low-base-rate transfer", || {
        let mut rng = ChaCha20Rng::seed_from_u64(1313);
        let mut synth = |positives: usize, total: usize| -> ScoredSet {
            let mut scores = Vec::with_capacity(total);
            let mut labels = Vec::with_capacity(total);
            for i in 0..total {
                let positive = i < positives;
                // overlapping noisy scores: positives in [0.45, 1.0],
                // negatives in [0.0, 0.55]
                let score = if positive {
                    0.45 + 0.55 * rng.gen::<f64>()
                } else {
                    0.55 * rng.gen::<f64>()
                };
                scores.push(score);
                labels.push(positive);
            }
            // plant unavoidable classification errors so no domain is
            // perfectly separable regardless of threshold
            scores[0] = 0.46;
            scores[1] = 0.48;
            scores[positives] = 0.54;
            scores[positives + 1] = 0.52;
            set(scores, labels)
        };
        let mut domains = BTreeMap::new();
        domains.insert("low_2.5pct".to_string(), synth(5, 200));
        domains.insert("high_74pct".to_string(), synth(148, 200));
        domains.insert("high_93pct".to_string(), synth(186, 200));
        let matrix = transfer_matrix(&domains);

        let high = ["high_74pct", "high_93pct"];
        let all = ["low_2.5pct", "high_74pct", "high_93pct"];
        let f1 = |s: &str, t: &str| matrix.cell(s, t).unwrap().f1;
        for source in high {
            for target in high {
                for low_source in all {
                    assert!(
                        f1(source, target) > f1(low_source, "low_2.5pct"),
                        "{source}->{target} ({}) should beat {low_source}->low ({})",
                        f1(source, target),
                        f1(low_source, "low_2.5pct"),
                    );
                }
            }
        }
    });
}
