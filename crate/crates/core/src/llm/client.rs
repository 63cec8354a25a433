//! Chat-completions transport and first-token probability extraction.

use std::thread;
use std::time::Duration;

use log::warn;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::label::RelevanceLabel;

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "ANNOBUDGET_API_KEY";

/// Number of alternatives requested per generated token.
pub const TOP_LOGPROBS: u32 = 20;

/// Anything that can answer a chat-completions request body.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &Value) -> Result<Value>;
}

/// Blocking HTTP client for an OpenAI-compatible server.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    /// `endpoint` is the API base (e.g. `http://localhost:8000/v1`) or the
    /// full `.../chat/completions` URL.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpBackend { client, url, api_key })
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &str) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        HttpBackend::new(endpoint, key, Duration::from_secs(120))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &Value) -> Result<Value> {
        let mut builder = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Http {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| Error::Transport(format!("invalid JSON body: {e}")))
    }
}

/// Attempts and backoff for transport failures and 5xx responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

fn retryable(err: &Error) -> bool {
    match err {
        Error::Transport(_) => true,
        Error::Http { status, .. } => *status >= 500,
        _ => false,
    }
}

/// Calls the backend, retrying with exponential backoff.
pub fn complete_with_retry(backend: &dyn CompletionBackend, request: &Value, policy: RetryPolicy) -> Result<Value> {
    let attempts = policy.attempts.max(1);
    let mut delay = policy.base_delay;
    let mut attempt = 1;
    loop {
        match backend.complete(request) {
            Ok(v) => return Ok(v),
            Err(e) if attempt < attempts && retryable(&e) => {
                warn!("request failed (attempt {attempt}/{attempts}): {e}; retrying in {delay:?}");
                thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// How the label constraint is communicated to the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Server-side choice among the label strings (`guided_choice`).
    #[default]
    GuidedChoice,
    /// Two-token generation; labels are projected client-side.
    ClientProjection,
}

impl ConstraintMode {
    /// Stable description of the constraint, part of the cache key.
    pub fn fingerprint(self) -> String {
        let labels: Vec<&str> = RelevanceLabel::ALL.iter().map(|l| l.as_str()).collect();
        let mode = match self {
            ConstraintMode::GuidedChoice => "guided-choice",
            ConstraintMode::ClientProjection => "client-projection",
        };
        format!("{mode}:{}", labels.join("|"))
    }
}

/// Request body for one sentence: temperature 0, one completion, per-token
/// probabilities on.
pub fn build_request(model: &str, prompt: &str, mode: ConstraintMode) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": 0.0,
        "n": 1,
        "logprobs": true,
        "top_logprobs": TOP_LOGPROBS,
    });
    match mode {
        ConstraintMode::GuidedChoice => {
            let labels: Vec<&str> = RelevanceLabel::ALL.iter().map(|l| l.as_str()).collect();
            body["guided_choice"] = json!(labels);
            body["max_tokens"] = json!(8);
        }
        ConstraintMode::ClientProjection => {
            body["max_tokens"] = json!(2);
        }
    }
    body
}

/// The label whose canonical string starts with the trimmed, lowercased
/// token, if exactly one does.
pub fn project_token(token: &str) -> Option<RelevanceLabel> {
    let t = token.trim().to_lowercase();
    if t.is_empty() {
        return None;
    }
    let mut matches = RelevanceLabel::ALL.iter().filter(|l| l.as_str().starts_with(&t));
    match (matches.next(), matches.next()) {
        (Some(&label), None) => Some(label),
        _ => None,
    }
}

/// Probability mass per label (indexed by label value) at the first generated
/// position. Alternatives that map to the same label are summed; each
/// distinct token string counts once.
pub fn first_token_probabilities(response: &Value) -> Result<[f64; 4]> {
    let first = response
        .pointer("/choices/0/logprobs/content/0")
        .filter(|v| v.is_object())
        .ok_or(Error::MissingLogprobs)?;

    let mut candidates: Vec<(&str, f64)> = Vec::new();
    if let Some(top) = first.get("top_logprobs").and_then(Value::as_array) {
        for alt in top {
            if let (Some(token), Some(lp)) = (alt.get("token").and_then(Value::as_str), alt.get("logprob").and_then(Value::as_f64)) {
                candidates.push((token, lp));
            }
        }
    }
    if let (Some(token), Some(lp)) = (first.get("token").and_then(Value::as_str), first.get("logprob").and_then(Value::as_f64)) {
        candidates.push((token, lp));
    }
    if candidates.is_empty() {
        return Err(Error::MissingLogprobs);
    }

    let mut seen = std::collections::HashSet::new();
    let mut probs = [0.0f64; 4];
    for (token, logprob) in candidates {
        if !seen.insert(token) {
            continue;
        }
        if let Some(label) = project_token(token) {
            let p = logprob.exp();
            if p.is_finite() {
                probs[label.index()] += p;
            }
        }
    }
    Ok(probs)
}
