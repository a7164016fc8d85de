//! HTTP adapters speaking the common chat-completion and embedding wire
//! protocols.
//!
//! Requests carry a message list (`system` for the role preamble, `user` for
//! the rendered prompt) plus decoding parameters; responses are read from the
//! first choice. Transient failures (transport errors, 429, 5xx) are retried
//! with jittered exponential backoff before surfacing an error. The API
//! credential is taken from an environment variable, never from code or
//! flags, and the header is omitted entirely when the variable is unset so
//! local unauthenticated endpoints work out of the box.

use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::gateway::{whitespace_tokens, Backend, CompletionRequest, CompletionResult};

pub const DEFAULT_CREDENTIAL_ENV: &str = "MALR_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: Option<String>,
    pub credential_env: String,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            credential_env: DEFAULT_CREDENTIAL_ENV.to_string(),
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }

    #[must_use]
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    #[must_use]
    pub fn with_credential_env(mut self, var: impl Into<String>) -> Self {
        self.credential_env = var.into();
        self
    }

    #[must_use]
    pub fn with_retry(mut self, max_attempts: u32, backoff_base_ms: u64) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff_base_ms = backoff_base_ms;
        self
    }

    fn credential(&self) -> Option<String> {
        std::env::var(&self.credential_env).ok().filter(|v| !v.is_empty())
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend {
                backend: "http".into(),
                message: format!("failed to build HTTP client: {e}"),
            })?;
        let id = match &config.model {
            Some(model) => format!("http:{model}"),
            None => "http".to_string(),
        };
        Ok(Self { config, client, id })
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult> {
        request.validate()?;
        let mut messages = Vec::new();
        if let Some(preamble) = &request.role_preamble {
            messages.push(json!({"role": "system", "content": preamble}));
        }
        messages.push(json!({"role": "user", "content": request.rendered_prompt}));
        let mut body = json!({
            "messages": messages,
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_output_tokens,
        });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        let raw = post_with_retry(&self.client, &self.config, &self.id, &body)?;
        let parsed: Value = serde_json::from_str(&raw).map_err(|e| malformed(&self.id, &raw, e))?;
        let text = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::MalformedResponse {
                backend: self.id.clone(),
                reason: "response has no choices[0].message.content string".into(),
                payload: truncate(&raw),
            })?
            .to_string();
        // Providers that omit usage still get consistent, if approximate,
        // accounting so the cost ledger never silently reads zero.
        let prompt_tokens = parsed["usage"]["prompt_tokens"].as_u64().unwrap_or_else(|| {
            whitespace_tokens(request.role_preamble.as_deref().unwrap_or(""))
                + whitespace_tokens(&request.rendered_prompt)
        });
        let output_tokens = parsed["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| whitespace_tokens(&text));
        Ok(CompletionResult {
            text,
            prompt_tokens,
            output_tokens,
            backend_id: self.id.clone(),
        })
    }
}

/// Embedding-endpoint client: `{"input": text}` in, `data[0].embedding` out.
pub struct HttpEmbedder {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    id: String,
}

impl HttpEmbedder {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend {
                backend: "http-embedder".into(),
                message: format!("failed to build HTTP client: {e}"),
            })?;
        let id = match &config.model {
            Some(model) => format!("http-embedder:{model}"),
            None => "http-embedder".to_string(),
        };
        Ok(Self { config, client, id })
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::EmptyEmbeddingText);
        }
        let mut body = json!({"input": text});
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        let raw = post_with_retry(&self.client, &self.config, &self.id, &body)?;
        let parsed: Value = serde_json::from_str(&raw).map_err(|e| malformed(&self.id, &raw, e))?;
        let values = parsed["data"][0]["embedding"]
            .as_array()
            .and_then(|arr| arr.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| Error::MalformedResponse {
                backend: self.id.clone(),
                reason: "response has no data[0].embedding number array".into(),
                payload: truncate(&raw),
            })?;
        if values.is_empty() {
            return Err(Error::MalformedResponse {
                backend: self.id.clone(),
                reason: "embedding array is empty".into(),
                payload: truncate(&raw),
            });
        }
        Ok(EmbeddingVector::new(values))
    }
}

fn post_with_retry(
    client: &reqwest::blocking::Client,
    config: &HttpBackendConfig,
    backend_id: &str,
    body: &Value,
) -> Result<String> {
    let mut last_failure = String::new();
    for attempt in 1..=config.max_attempts {
        if attempt > 1 {
            std::thread::sleep(backoff_delay(config.backoff_base_ms, attempt - 1));
        }
        let mut builder = client.post(&config.endpoint).json(body);
        if let Some(key) = config.credential() {
            builder = builder.bearer_auth(key);
        }
        match builder.send() {
            Ok(response) => {
                let status = response.status();
                let raw = response.text().map_err(|e| Error::Backend {
                    backend: backend_id.to_string(),
                    message: format!("failed reading response body: {e}"),
                })?;
                if status.is_success() {
                    return Ok(raw);
                }
                let retryable = status.as_u16() == 429 || status.is_server_error();
                if !retryable {
                    return Err(Error::Backend {
                        backend: backend_id.to_string(),
                        message: format!("HTTP {status}: {}", truncate(&raw)),
                    });
                }
                last_failure = format!("HTTP {status}");
            }
            Err(e) => last_failure = e.to_string(),
        }
    }
    Err(Error::BackendUnreachable {
        backend: backend_id.to_string(),
        attempts: config.max_attempts,
        message: last_failure,
    })
}

fn backoff_delay(base_ms: u64, retries_so_far: u32) -> Duration {
    let exp = base_ms.saturating_mul(1 << retries_so_far.min(16));
    let jitter = if base_ms == 0 {
        0
    } else {
        rand::thread_rng().gen_range(0..=base_ms / 4 + 1)
    };
    Duration::from_millis(exp.saturating_add(jitter))
}

fn malformed(backend_id: &str, raw: &str, e: serde_json::Error) -> Error {
    Error::MalformedResponse {
        backend: backend_id.to_string(),
        reason: format!("response is not valid JSON: {e}"),
        payload: truncate(raw),
    }
}

fn truncate(raw: &str) -> String {
    const LIMIT: usize = 2000;
    if raw.len() <= LIMIT {
        raw.to_string()
    } else {
        let mut end = LIMIT;
        while !raw.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &raw[..end])
    }
}
