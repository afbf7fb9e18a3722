//! Remote HTTP backend speaking a chat-completions wire protocol.
//!
//! Three endpoints are used, all POST with JSON bodies:
//!
//! - `{base}/chat/completions`: `{model, messages, temperature, top_p, n,
//!   max_tokens, seed}` answered by `{choices: [{message: {content}}]}`,
//!   choices in request order.
//! - `{base}/embeddings`: `{model, input: [..]}` answered by
//!   `{data: [{embedding: [..]}]}`, one vector per input in order.
//! - the entailment sidecar (default `{base}/entail`): `{premise,
//!   hypothesis}` answered by `{entailment: p}` with `p` in [0, 1].
//!
//! Transient transport failures are retried up to `retries` times with
//! exponential backoff; non-2xx responses are surfaced immediately as
//! [`BackendError::Refused`]. A gate caps in-flight requests.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{
    parse_claim_lines, parse_ratings, parse_verdicts, Backend, BackendError, DecodingParams,
    Embedder, EmbeddingVector, Entailer, Entailment, JudgeVerdicts,
};
use crate::derive_seed;

pub const BASE_URL_ENV: &str = "HALLUSCAN_BASE_URL";
pub const API_KEY_ENV: &str = "HALLUSCAN_API_KEY";

/// Connection settings for a remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Root URL, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    /// Served model identifier sent in generation requests.
    pub model: String,
    /// Model identifier for embedding requests; defaults to `model`.
    #[serde(default)]
    pub embed_model: Option<String>,
    /// Entailment sidecar URL; defaults to `{base_url}/entail`.
    #[serde(default)]
    pub entail_url: Option<String>,
    /// Bearer credential; omitted header when absent.
    #[serde(default)]
    pub api_key: Option<String>,
    /// Seed forwarded in generation requests and used for judge shuffling.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Maximum concurrent in-flight requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Retries after the first attempt for transport failures.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_seed() -> u64 {
    42
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    100
}
fn default_timeout_secs() -> u64 {
    30
}

impl RemoteConfig {
    /// Builds a config from `HALLUSCAN_BASE_URL` / `HALLUSCAN_API_KEY`.
    pub fn from_env(model: &str) -> Result<Self, BackendError> {
        let base_url = std::env::var(BASE_URL_ENV).map_err(|_| {
            BackendError::InvalidRequest(format!("{BASE_URL_ENV} is not set"))
        })?;
        Ok(Self {
            base_url,
            model: model.to_string(),
            embed_model: None,
            entail_url: None,
            api_key: std::env::var(API_KEY_ENV).ok(),
            seed: default_seed(),
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        })
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(cap: usize) -> Self {
        Self { permits: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().expect("gate poisoned");
        while *permits == 0 {
            permits = self.freed.wait(permits).expect("gate poisoned");
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.gate.permits.lock().expect("gate poisoned");
        *permits += 1;
        self.gate.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(Self { config, client, gate })
    }

    fn chat_url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn embed_url(&self) -> String {
        format!("{}/embeddings", self.config.base_url.trim_end_matches('/'))
    }

    fn entail_url(&self) -> String {
        self.config
            .entail_url
            .clone()
            .unwrap_or_else(|| format!("{}/entail", self.config.base_url.trim_end_matches('/')))
    }

    /// POSTs `body` to `url`, retrying transport failures with exponential
    /// backoff. Non-2xx responses are not retried.
    fn post_json<B: Serialize, R: serde::de::DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let _permit = self.gate.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| BackendError::Unreachable(e.to_string()))?;
                    if !status.is_success() {
                        return Err(BackendError::Refused {
                            status: status.as_u16(),
                            detail: text.chars().take(200).collect(),
                        });
                    }
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Malformed(format!("{url}: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(BackendError::Unreachable(format!(
            "{url} failed after {} attempts: {last_err}",
            self.config.retries + 1
        )))
    }

    fn complete(
        &self,
        prompt: &str,
        n: usize,
        params: &DecodingParams,
    ) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        if n == 0 {
            return Err(BackendError::InvalidRequest("completion count must be >= 1".into()));
        }
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![Message { role: "user", content: prompt }],
            temperature: params.temperature,
            top_p: params.top_p,
            n,
            max_tokens: params.max_tokens,
            seed: self.config.seed,
        };
        let response: ChatResponse = self.post_json(&self.chat_url(), &request)?;
        if response.choices.len() != n {
            return Err(BackendError::Malformed(format!(
                "requested {n} completions, got {}",
                response.choices.len()
            )));
        }
        Ok(response.choices.into_iter().map(|c| c.message.content).collect())
    }
}

// ── wire types ─────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
    top_p: f64,
    n: usize,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Serialize)]
struct EntailRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailResponse {
    entailment: f64,
}

// ── prompt templates ───────────────────────────────────────────────────────

fn decompose_prompt(response: &str) -> String {
    format!(
        "Break the following response into its atomic factual claims. \
         Output one claim per line as a numbered list, nothing else. \
         If the response asserts nothing, output nothing.\n\nResponse:\n{response}\n\nClaims:"
    )
}

fn rating_prompt(query: &str, response: &str, claims: &[String]) -> String {
    let mut listed = String::new();
    for (i, claim) in claims.iter().enumerate() {
        listed.push_str(&format!("Claim {}: {claim}\n", i + 1));
    }
    format!(
        "You answered the question below. Reconsider each claim from your answer, \
         think about how confident you are that it is factually correct, and rate the \
         support for each claim on a 1-10 scale. Respond with one line per claim in the \
         exact form `Claim i: r/10`.\n\nQuestion: {query}\n\nAnswer:\n{response}\n\n{listed}\nRatings:"
    )
}

fn judge_prompt(query: &str, context: &str, claims: &[&String]) -> String {
    let mut listed = String::new();
    for (i, claim) in claims.iter().enumerate() {
        listed.push_str(&format!("{}: {claim}\n", i + 1));
    }
    let context_block = if context.is_empty() {
        String::new()
    } else {
        format!("Context:\n{context}\n\n")
    };
    format!(
        "Judge whether each numbered claim is supported. Respond with one line per \
         claim in the exact form `i: SUPPORTED` or `i: NOT SUPPORTED`.\n\n\
         {context_block}Question: {query}\n\nClaims:\n{listed}\nVerdicts:"
    )
}

impl Embedder for RemoteBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let model = self.config.embed_model.as_deref().unwrap_or(&self.config.model);
        let request = EmbedRequest { model, input: texts };
        let response: EmbedResponse = self.post_json(&self.embed_url(), &request)?;
        if response.data.len() != texts.len() {
            return Err(BackendError::Malformed(format!(
                "requested {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        response
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.is_empty() {
                    Err(BackendError::Malformed("empty embedding vector".into()))
                } else {
                    Ok(EmbeddingVector::new(d.embedding))
                }
            })
            .collect()
    }
}

impl Entailer for RemoteBackend {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<Entailment, BackendError> {
        let request = EntailRequest { premise, hypothesis };
        let response: EntailResponse = self.post_json(&self.entail_url(), &request)?;
        Ok(Entailment { probability: response.entailment.clamp(0.0, 1.0) })
    }
}

impl Backend for RemoteBackend {
    fn generate(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        Ok(self.complete(prompt, 1, params)?.remove(0))
    }

    fn sample_k(
        &self,
        prompt: &str,
        k: usize,
        params: &DecodingParams,
    ) -> Result<Vec<String>, BackendError> {
        self.complete(prompt, k, params)
    }

    fn decompose(&self, response: &str) -> Result<Vec<String>, BackendError> {
        let reply = self.generate(&decompose_prompt(response), &DecodingParams::greedy())?;
        Ok(parse_claim_lines(&reply))
    }

    fn rate_claims(
        &self,
        query: &str,
        response: &str,
        claims: &[String],
    ) -> Result<Vec<u8>, BackendError> {
        let reply =
            self.generate(&rating_prompt(query, response, claims), &DecodingParams::greedy())?;
        Ok(parse_ratings(&reply, claims.len()))
    }

    fn judge_supported(
        &self,
        query: &str,
        context: &str,
        claims: &[String],
    ) -> Result<JudgeVerdicts, BackendError> {
        if claims.is_empty() {
            return Ok(JudgeVerdicts { supported: Vec::new(), unparseable: 0 });
        }
        // Present claims in a seed-shuffled order so verdicts cannot lean on
        // positional bias, then restore the original order.
        let mut order: Vec<usize> = (0..claims.len()).collect();
        let mut parts: Vec<&str> = vec!["judge-shuffle", query];
        parts.extend(claims.iter().map(String::as_str));
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(self.config.seed, &parts));
        order.shuffle(&mut rng);
        let shuffled: Vec<&String> = order.iter().map(|&i| &claims[i]).collect();

        let reply =
            self.generate(&judge_prompt(query, context, &shuffled), &DecodingParams::greedy())?;
        let parsed = parse_verdicts(&reply, claims.len());
        let mut supported = vec![false; claims.len()];
        for (pos, &original) in order.iter().enumerate() {
            supported[original] = parsed.supported[pos];
        }
        Ok(JudgeVerdicts { supported, unparseable: parsed.unparseable })
    }
}
