//! Command-line interface: grid runs, single-sample scoring, routing
//! decisions, report regeneration, and dataset validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use halluscan::backend::mock::MockBackend;
use halluscan::backend::remote::{RemoteBackend, RemoteConfig};
use halluscan::backend::{Backend, DecodingParams, Embedder};
use halluscan::claims::{extract_claims, ClaimSet, DEFAULT_MATCH_THRESHOLD};
use halluscan::detectors::{
    baseline_score, cluster_semantic, score_judge, score_nli, score_rav, score_sc, score_se,
    score_seme, CostTable, DetectionResult, Method,
};
use halluscan::derive_seed;
use halluscan::harness::grid::run_grid;
use halluscan::harness::report::{emit_pareto, emit_reports, emit_transfer};
use halluscan::harness::{
    build_prompt, derive_label, load_dataset, Domain, ModelSpec, RunConfig, Sample,
};
use halluscan::retrieval::{LocalCorpusRetriever, NullRetriever, Retriever};
use halluscan::router::{extract_features, route, RiskModel, RouteThresholds};

#[derive(Parser)]
#[command(
    name = "halluscan",
    version,
    about = "Hallucination detection scorers, adaptive routing, and a benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full (method, model, domain) grid and emit reports.
    Run(RunArgs),
    /// Score one sample with one method and print the result as JSON.
    Score(ScoreArgs),
    /// Pick a detection method for one query from its risk probability.
    Route(RouteArgs),
    /// Regenerate every report file from persisted results.
    Report(ResultsArgs),
    /// Regenerate only the domain-transfer matrix CSV.
    Transfer(ResultsArgs),
    /// Regenerate only the cost-quality frontier CSV.
    Pareto(ResultsArgs),
    /// Check a JSONL dataset against the sample schema.
    ValidateDataset(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run-configuration JSON file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset JSONL path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for results, reports, and routing files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global random seed (HALLUSCAN_SEED overrides the config file; this
    /// flag overrides both).
    #[arg(long)]
    seed: Option<u64>,
    /// Responses sampled per query for the K-sampling methods.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated method names (sc,se,seme,judge,nli,rav,random,always_positive,majority).
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated domains (scientific,open_domain,commonsense).
    #[arg(long)]
    domains: Option<String>,
    /// Fixture directory applied to every mock model in the run.
    #[arg(long)]
    mock_dir: Option<PathBuf>,
    /// Directory of .txt passages backing retrieval-augmented verification.
    #[arg(long)]
    rav_corpus: Option<PathBuf>,
    /// Concurrent (model, domain) cells.
    #[arg(long)]
    workers: Option<usize>,
    /// Reliability/calibration bin count.
    #[arg(long)]
    bins: Option<usize>,
    /// Bootstrap resamples for confidence intervals.
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    /// Claim-matching cosine threshold in (0, 1].
    #[arg(long)]
    match_threshold: Option<f64>,
    /// Passages retrieved per claim.
    #[arg(long)]
    top_l: Option<usize>,
    /// Enable the routing phase with default thresholds.
    #[arg(long)]
    routing: bool,
    /// Risk threshold above which the high-cost scorer is chosen.
    #[arg(long)]
    theta_high: Option<f64>,
    /// Risk threshold above which the mid-cost scorer is chosen.
    #[arg(long)]
    theta_med: Option<f64>,
    /// Forward-pass budget for the routing phase.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Detection method name (sc,se,seme,judge,nli,rav,random,always_positive,majority).
    #[arg(long)]
    method: String,
    /// Path to one sample as a JSON object.
    #[arg(long)]
    input: PathBuf,
    /// Mock fixture directory; a synthetic mock is used when omitted.
    #[arg(long)]
    mock_dir: Option<PathBuf>,
    /// Remote model name, configured via HALLUSCAN_BASE_URL and
    /// HALLUSCAN_API_KEY.
    #[arg(long, conflicts_with = "mock_dir")]
    remote: Option<String>,
    /// Backend and baseline seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Responses sampled for the K-sampling methods.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Claim-matching cosine threshold in (0, 1].
    #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
    match_threshold: f64,
    /// Directory of .txt passages backing retrieval-augmented verification.
    #[arg(long)]
    rav_corpus: Option<PathBuf>,
    /// Passages retrieved per claim.
    #[arg(long, default_value_t = 3)]
    top_l: usize,
}

#[derive(Args)]
struct RouteArgs {
    /// Trained risk-model JSON file; requires --query, --response, --domain.
    #[arg(long)]
    risk_model: Option<PathBuf>,
    /// Risk probability in [0, 1]; alternative to --risk-model.
    #[arg(long)]
    p_risk: Option<f64>,
    /// Question text the risk model extracts features from.
    #[arg(long)]
    query: Option<String>,
    /// Optional context passage accompanying the query.
    #[arg(long)]
    context: Option<String>,
    /// Model response the risk model extracts features from.
    #[arg(long)]
    response: Option<String>,
    /// scientific | open_domain | commonsense
    #[arg(long)]
    domain: Option<String>,
    /// Forward-pass budget.
    #[arg(long, default_value_t = 5.0)]
    budget: f64,
    /// Risk threshold above which the high-cost scorer is chosen.
    #[arg(long, default_value_t = 0.7)]
    theta_high: f64,
    /// Risk threshold above which the mid-cost scorer is chosen.
    #[arg(long, default_value_t = 0.4)]
    theta_med: f64,
}

#[derive(Args)]
struct ResultsArgs {
    /// Output directory of a previous run.
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset JSONL path.
    #[arg(long)]
    dataset: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Score(args) => cmd_score(args),
        Command::Route(args) => cmd_route(args),
        Command::Report(args) => cmd_report(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Pareto(args) => cmd_pareto(args),
        Command::ValidateDataset(args) => cmd_validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: FromStr<Err = String>,
{
    text.split(',')
        .map(|item| item.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{what}: {e}")))
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let (Some(dataset), Some(out)) = (&args.dataset, &args.out) else {
                bail!("pass --config, or both --dataset and --out");
            };
            RunConfig::new(dataset.display().to_string(), out.display().to_string())
        }
    };
    config.apply_env()?;
    if let Some(dataset) = &args.dataset {
        config.dataset = dataset.display().to_string();
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(methods) = &args.methods {
        config.methods = parse_list(methods, "--methods")?;
    }
    if let Some(domains) = &args.domains {
        config.domains = parse_list(domains, "--domains")?;
    }
    if let Some(dir) = &args.mock_dir {
        for model in &mut config.models {
            if let ModelSpec::Mock { fixtures_dir, .. } = model {
                *fixtures_dir = Some(dir.display().to_string());
            }
        }
    }
    if let Some(corpus) = &args.rav_corpus {
        config.rav_corpus = Some(corpus.display().to_string());
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if let Some(bins) = args.bins {
        config.bins = bins;
    }
    if let Some(resamples) = args.bootstrap_resamples {
        config.bootstrap_resamples = resamples;
    }
    if let Some(threshold) = args.match_threshold {
        config.match_threshold = threshold;
    }
    if let Some(top_l) = args.top_l {
        config.top_l = top_l;
    }
    let routing_flags =
        args.routing || args.theta_high.is_some() || args.theta_med.is_some() || args.budget.is_some();
    if routing_flags {
        let mut routing = config.routing.unwrap_or_default();
        if let Some(v) = args.theta_high {
            routing.theta_high = v;
        }
        if let Some(v) = args.theta_med {
            routing.theta_med = v;
        }
        if let Some(v) = args.budget {
            routing.budget = v;
        }
        config.routing = Some(routing);
    }

    let summary = run_grid(&config)?;
    let reports = emit_reports(Path::new(&config.out_dir))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "grid": summary,
            "reports": reports,
        }))?
    );
    if !summary.aborted.is_empty() {
        bail!(
            "{} cell(s) aborted: {}",
            summary.aborted.len(),
            summary.aborted.join("; ")
        );
    }
    Ok(())
}

fn build_backend(
    mock_dir: Option<&Path>,
    remote: Option<&str>,
    seed: u64,
) -> Result<(Arc<dyn Backend>, String)> {
    match (mock_dir, remote) {
        (_, Some(name)) => {
            let config = RemoteConfig::from_env(name)?;
            Ok((Arc::new(RemoteBackend::new(config)?), name.to_string()))
        }
        (Some(dir), None) => {
            Ok((Arc::new(MockBackend::from_dir(dir, seed)?), "mock".to_string()))
        }
        (None, None) => Ok((Arc::new(MockBackend::new(seed)), "mock".to_string())),
    }
}

fn build_retriever(
    corpus: Option<&Path>,
    backend: Arc<dyn Backend>,
) -> Result<Arc<dyn Retriever>> {
    match corpus {
        Some(dir) => {
            let embedder: Arc<dyn Embedder> = backend;
            Ok(Arc::new(LocalCorpusRetriever::from_dir(dir, embedder)?))
        }
        None => Ok(Arc::new(NullRetriever)),
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let method: Method = args.method.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let sample: Sample = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    sample.validate().map_err(|e| anyhow::anyhow!("invalid sample: {e}"))?;

    let (backend, model_name) =
        build_backend(args.mock_dir.as_deref(), args.remote.as_deref(), args.seed)?;
    let retriever = build_retriever(args.rav_corpus.as_deref(), backend.clone())?;

    let prompt = build_prompt(&sample);
    let response = backend.generate(&prompt, &DecodingParams::greedy())?;
    let label = derive_label(&response, &sample);
    let claims = extract_claims(backend.as_ref(), &response, &sample.id);
    let context = sample.context.as_deref().unwrap_or("");

    let result: DetectionResult = match method {
        Method::SelfConsistency => {
            let sampled = backend.sample_k(&prompt, args.k, &DecodingParams::sampling())?;
            let sample_claims: Vec<ClaimSet> = sampled
                .iter()
                .enumerate()
                .map(|(i, text)| {
                    extract_claims(backend.as_ref(), text, &format!("{}#k{i}", sample.id))
                })
                .collect();
            score_sc(&sample_claims, backend.as_ref(), args.match_threshold)?
        }
        Method::SelfEval => score_se(&sample.query, &response, &claims, backend.as_ref())?,
        Method::SemanticEntropy => {
            let sampled = backend.sample_k(&prompt, args.k, &DecodingParams::sampling())?;
            score_seme(&cluster_semantic(&sampled, backend.as_ref())?)
        }
        Method::Judge => score_judge(&sample.query, context, &claims, backend.as_ref())?,
        Method::Nli => {
            score_nli(&sample.query, context, &claims, backend.as_ref(), backend.as_ref())?
        }
        Method::Rav => score_rav(&claims, retriever.as_ref(), backend.as_ref(), args.top_l)?,
        Method::RandomBaseline | Method::AlwaysPositive | Method::MajorityClass => {
            let seed =
                derive_seed(args.seed, &["baseline", method.name(), &model_name, &sample.id]);
            baseline_score(method, seed, false)
        }
    };

    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "id": sample.id,
            "model": model_name,
            "response": response,
            "label": label,
            "n_claims": claims.len(),
            "result": result,
        }))?
    );
    Ok(())
}

fn cmd_route(args: RouteArgs) -> Result<()> {
    let thresholds = RouteThresholds { theta_high: args.theta_high, theta_med: args.theta_med };
    let p_risk = match (args.p_risk, &args.risk_model) {
        (Some(p), None) => {
            if !(0.0..=1.0).contains(&p) {
                bail!("--p-risk must be in [0, 1], got {p}");
            }
            p
        }
        (None, Some(path)) => {
            let model = RiskModel::load(path)?;
            let (Some(query), Some(response), Some(domain)) =
                (&args.query, &args.response, &args.domain)
            else {
                bail!("--risk-model needs --query, --response, and --domain");
            };
            let domain: Domain = domain.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let features = extract_features(query, args.context.as_deref(), response, domain);
            model.predict(&features)
        }
        _ => bail!("pass exactly one of --p-risk or --risk-model"),
    };
    let costs = CostTable::default();
    let chosen = route(p_risk, args.budget, &thresholds, &costs)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "p_risk": p_risk,
            "method": chosen.name(),
            "forward_passes": costs.forward_passes(chosen),
            "budget": args.budget,
            "theta_high": args.theta_high,
            "theta_med": args.theta_med,
        }))?
    );
    Ok(())
}

fn cmd_report(args: ResultsArgs) -> Result<()> {
    let summary = emit_reports(&args.results)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_transfer(args: ResultsArgs) -> Result<()> {
    let path = emit_transfer(&args.results)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "written": path }))?);
    Ok(())
}

fn cmd_pareto(args: ResultsArgs) -> Result<()> {
    let path = emit_pareto(&args.results)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "written": path }))?);
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let samples = load_dataset(&args.dataset)?;
    let mut domains: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    let mut multiple_choice = 0usize;
    for sample in &samples {
        *domains.entry(sample.domain.name()).or_default() += 1;
        if sample.is_multiple_choice() {
            multiple_choice += 1;
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "dataset": args.dataset,
            "samples": samples.len(),
            "multiple_choice": multiple_choice,
            "domains": domains,
        }))?
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_internally_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn method_and_domain_lists_parse_or_name_the_flag() {
        let methods: Vec<Method> = parse_list("sc, se,nli", "--methods").unwrap();
        assert_eq!(methods, vec![Method::SelfConsistency, Method::SelfEval, Method::Nli]);
        let err = parse_list::<Method>("sc,bogus", "--methods").unwrap_err();
        assert!(err.to_string().contains("--methods"), "{err}");
        let domains: Vec<Domain> = parse_list("scientific", "--domains").unwrap();
        assert_eq!(domains, vec![Domain::Scientific]);
    }

    #[test]
    fn routing_flags_are_recognized() {
        let cli = Cli::try_parse_from([
            "halluscan",
            "route",
            "--p-risk",
            "0.9",
            "--budget",
            "5",
        ])
        .unwrap();
        match cli.command {
            Command::Route(args) => {
                assert_eq!(args.p_risk, Some(0.9));
                assert_eq!(args.budget, 5.0);
                assert_eq!(args.theta_high, 0.7);
            }
            _ => panic!("expected route"),
        }
    }
}
