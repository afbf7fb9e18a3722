//! Shared fixture plumbing for the integration tests: a synthetic dataset
//! plus mock fixture tables whose self-consistency behavior is engineered
//! per label, and small helpers for reading run outputs.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use halluscan::backend::mock::MockFixtures;
use halluscan::harness::{Domain, ModelSpec, RunConfig, Sample};

pub struct GridFixture {
    pub dataset: PathBuf,
    pub mock_dir: PathBuf,
}

/// Writes a dataset plus mock fixture tables under `root`. Per domain,
/// `correct` samples answer with the gold string (label: not hallucinated)
/// and `hallucinated` samples fall through to the synthetic mock answer
/// (label: hallucinated). Hallucinated samples draw five variants with
/// mutually disjoint claim sets; correct samples' five variants share one
/// claim set.
pub fn write_grid_fixture(
    root: &Path,
    domains: &[Domain],
    correct: usize,
    hallucinated: usize,
) -> GridFixture {
    let mock_dir = root.join("mock");
    let mut fixtures = MockFixtures::default();
    let mut lines = Vec::new();
    for domain in domains {
        for i in 0..(correct + hallucinated) {
            let id = format!("{}-{i:02}", domain.name());
            let query = format!("Question {id}?");
            let sample = Sample {
                id: id.clone(),
                query: query.clone(),
                context: None,
                gold: vec![format!("alpha {id}")],
                choices: None,
                answer_key: None,
                domain: *domain,
            };
            let variants: Vec<String> =
                (0..5).map(|v| format!("Sampled answer {v} for {id}.")).collect();
            if i < correct {
                fixtures
                    .generate
                    .insert(query.clone(), format!("The answer is alpha {id}."));
                for variant in &variants {
                    fixtures.decompose.insert(
                        variant.clone(),
                        vec![format!("fact {id} one"), format!("fact {id} two")],
                    );
                }
            } else {
                for (v, variant) in variants.iter().enumerate() {
                    fixtures
                        .decompose
                        .insert(variant.clone(), vec![format!("solo {id} {v}")]);
                }
            }
            fixtures.samples.insert(query.clone(), variants);
            lines.push(serde_json::to_string(&sample).unwrap());
        }
    }
    fixtures.save(&mock_dir).unwrap();
    let dataset = root.join("dataset.jsonl");
    fs::write(&dataset, lines.join("\n") + "\n").unwrap();
    GridFixture { dataset, mock_dir }
}

pub fn grid_config(fixture: &GridFixture, out: &Path, models: &[&str]) -> RunConfig {
    let mut config = RunConfig::new(
        fixture.dataset.display().to_string(),
        out.display().to_string(),
    );
    config.models = models
        .iter()
        .map(|name| ModelSpec::Mock {
            name: (*name).to_string(),
            fixtures_dir: Some(fixture.mock_dir.display().to_string()),
        })
        .collect();
    config.bootstrap_resamples = 500;
    config
}

/// Data rows of a CSV file (header skipped), split on commas.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}
