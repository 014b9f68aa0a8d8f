//! JSON-over-HTTP completion-scoring backend.
//!
//! The endpoint receives the rendered prompt and candidate completions and
//! must return one total log-probability per candidate; responses are
//! re-normalized with a log-softmax before they reach the engine.

use std::time::Duration;

use icm_core::model::Example;
use icm_core::scorer::{ScoreError, ScorerBackend, ScoringContext};
use serde::{Deserialize, Serialize};

/// Connection settings; the auth token normally arrives via the
/// `ICM_BACKEND_TOKEN` environment variable rather than a config file.
#[derive(Clone, Debug)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// Retries after the first attempt; backoff doubles per retry.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_context: usize,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: String::from("http://127.0.0.1:8080/score"),
            token: None,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            max_context: 64,
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    candidates: Vec<String>,
    logprobs: bool,
}

#[derive(Deserialize)]
struct ScoreResponse {
    /// Total log-probability of each candidate completion, request order.
    logprobs: Vec<f64>,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

/// Renders context demonstrations and the target into one completion
/// prompt: each entry is its prompt followed by the chosen label string,
/// entries separated by blank lines, with the target's label slot left
/// open for the candidates.
pub fn render_prompt(target: &Example, context: &ScoringContext<'_>) -> String {
    let mut out = String::new();
    for (example, label) in &context.entries {
        out.push_str(&example.prompt_text);
        out.push(' ');
        out.push_str(&example.candidate_labels[*label]);
        out.push_str("\n\n");
    }
    out.push_str(&target.prompt_text);
    out
}

fn log_softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + raw.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    raw.iter().map(|x| x - lse).collect()
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, reqwest::Error> {
        let client = reqwest::blocking::Client::builder().timeout(config.timeout).build()?;
        Ok(HttpBackend { config, client })
    }

    fn attempt(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, String> {
        let mut builder = self.client.post(&self.config.endpoint).json(request);
        if let Some(token) = &self.config.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("endpoint returned {status}"));
        }
        let parsed: ScoreResponse = response.json().map_err(|e| format!("bad response body: {e}"))?;
        if parsed.logprobs.len() != request.candidates.len() {
            return Err(format!(
                "endpoint returned {} logprobs for {} candidates",
                parsed.logprobs.len(),
                request.candidates.len()
            ));
        }
        Ok(parsed.logprobs)
    }
}

impl ScorerBackend for HttpBackend {
    fn is_deterministic(&self) -> bool {
        // Remote inference servers make no bit-stability promises.
        false
    }

    fn max_context(&self) -> usize {
        self.config.max_context
    }

    fn label_log_probs(&self, target: &Example, context: &ScoringContext<'_>) -> Result<Vec<f64>, ScoreError> {
        let prompt = render_prompt(target, context);
        let request = ScoreRequest {
            prompt: &prompt,
            candidates: target.candidate_labels.iter().map(|l| format!(" {l}")).collect(),
            logprobs: true,
        };
        let mut backoff = self.config.initial_backoff;
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(&request) {
                Ok(raw) => return Ok(log_softmax(&raw)),
                Err(detail) => last_error = detail,
            }
        }
        Err(ScoreError::BackendUnreachable(format!(
            "{} after {} attempts: {last_error}",
            self.config.endpoint,
            self.config.max_retries + 1
        )))
    }
}
