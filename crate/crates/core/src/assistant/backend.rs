use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AssistError, Prompt};

/// Sampling temperature sent with every completion request.
pub const SAMPLING_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// OpenAI-style chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackend {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Answer with the rule-based advisory when the endpoint fails.
    pub fallback_on_error: bool,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: DEFAULT_TIMEOUT,
            fallback_on_error: true,
        }
    }

    /// Reads `ASSISTANT_BASE_URL`, `ASSISTANT_API_KEY` and `ASSISTANT_MODEL`.
    /// `None` when no base URL is set.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var("ASSISTANT_BASE_URL").ok().filter(|s| !s.is_empty())?;
        let model = std::env::var("ASSISTANT_MODEL").unwrap_or_else(|_| "gpt-4o".into());
        let mut b = HttpBackend::new(base, model);
        b.api_key = std::env::var("ASSISTANT_API_KEY").ok().filter(|s| !s.is_empty());
        Some(b)
    }

    pub fn request_body(&self, prompt: &Prompt) -> Value {
        json!({
            "model": self.model,
            "temperature": SAMPLING_TEMPERATURE,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Backend {
    Http(HttpBackend),
    /// Rule-based advisory only.
    Fallback,
}

impl Backend {
    pub fn from_env() -> Self {
        HttpBackend::from_env().map(Backend::Http).unwrap_or(Backend::Fallback)
    }
}

/// One completion request; the reply text is returned verbatim.
pub async fn infer(prompt: &Prompt, backend: &HttpBackend) -> Result<String, AssistError> {
    let client = reqwest::Client::builder()
        .timeout(backend.timeout)
        .build()
        .map_err(|e| AssistError::BackendUnavailable(e.to_string()))?;
    let url = format!("{}/chat/completions", backend.base_url.trim_end_matches('/'));
    let mut req = client.post(url).json(&backend.request_body(prompt));
    if let Some(key) = &backend.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().await.map_err(|e| {
        if e.is_timeout() {
            AssistError::Timeout
        } else {
            AssistError::BackendUnavailable(e.to_string())
        }
    })?;
    let status = resp.status();
    if !status.is_success() {
        return Err(AssistError::BackendUnavailable(format!("HTTP {status}")));
    }
    let body: Value = resp.json().await.map_err(|e| {
        if e.is_timeout() {
            AssistError::Timeout
        } else {
            AssistError::BadResponse(e.to_string())
        }
    })?;
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| AssistError::BadResponse("no choices[0].message.content".into()))
}
