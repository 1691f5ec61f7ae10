//! Clients for OpenAI-style chat-completion and embedding endpoints.

use std::time::Duration;

use promptgrad_core::embedding::Encoder;
use promptgrad_core::gateway::{Backoff, Provider, ProviderCall, ProviderError};
use serde_json::{json, Value};
use ureq::Agent;

use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "PROMPTGRAD_API_KEY";

#[derive(Clone, Debug)]
pub struct Endpoint {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    /// Reads the token from `api_key_env`; a missing variable means no
    /// `Authorization` header.
    pub fn from_env(base_url: &str, model: &str, api_key_env: &str, timeout: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            timeout,
        }
    }

    fn agent(&self) -> Agent {
        Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    /// POST `body` to `base_url/path` and return the parsed JSON. Status 408,
    /// 429 and 5xx come back as transport errors so the gateway retries them.
    fn post(&self, agent: &Agent, path: &str, body: &Value) -> std::result::Result<Value, ProviderError> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| ProviderError::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => {
                serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(format!("{url}: invalid JSON: {e}")))
            }
            408 | 429 | 500..=599 => Err(ProviderError::Transport(format!(
                "{url}: HTTP {status}: {}",
                snippet(&text)
            ))),
            _ => Err(ProviderError::Malformed(format!(
                "{url}: HTTP {status}: {}",
                snippet(&text)
            ))),
        }
    }
}

fn snippet(text: &str) -> &str {
    let end = text.char_indices().nth(200).map(|(i, _)| i).unwrap_or(text.len());
    &text[..end]
}

/// Chat-completion provider. Each rendered template is sent as one user
/// message.
pub struct HttpProvider {
    endpoint: Endpoint,
    agent: Agent,
    id: String,
}

impl HttpProvider {
    pub fn new(endpoint: Endpoint) -> Self {
        let id = format!("http:{}@{}", endpoint.model, endpoint.base_url);
        Self {
            agent: endpoint.agent(),
            endpoint,
            id,
        }
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, call: &ProviderCall<'_>) -> std::result::Result<String, ProviderError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": call.rendered}],
            "temperature": call.temperature,
            "max_tokens": call.max_tokens,
        });
        let v = self.endpoint.post(&self.agent, "chat/completions", &body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("response has no choices[0].message.content".into()))
    }
}

/// Embedding endpoint client.
pub struct HttpEncoder {
    endpoint: Endpoint,
    agent: Agent,
    dimension: usize,
    id: String,
}

impl HttpEncoder {
    pub fn new(endpoint: Endpoint, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        let id = format!("http:{}@{}", endpoint.model, endpoint.base_url);
        Ok(Self {
            agent: endpoint.agent(),
            endpoint,
            dimension,
            id,
        })
    }
}

impl Encoder for HttpEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, texts: &[&str]) -> promptgrad_core::Result<Vec<Vec<f64>>> {
        let body = json!({"model": self.endpoint.model, "input": texts});
        let v = self
            .endpoint
            .post(&self.agent, "embeddings", &body)
            .map_err(|e| match e {
                ProviderError::Transport(m) => promptgrad_core::Error::Transport(m),
                ProviderError::Malformed(m) => promptgrad_core::Error::Protocol(m),
            })?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| promptgrad_core::Error::Protocol("response has no data array".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|x| x as usize).unwrap_or(i);
            let vec = item["embedding"]
                .as_array()
                .ok_or_else(|| promptgrad_core::Error::Protocol(format!("data[{i}] has no embedding")))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| promptgrad_core::Error::Protocol("non-numeric embedding".into()))
                })
                .collect::<promptgrad_core::Result<Vec<f64>>>()?;
            rows.push((index, vec));
        }
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}

/// Exponential backoff: `base · 2^attempt`, capped at `max`.
#[derive(Clone, Copy, Debug)]
pub struct SleepBackoff {
    pub base: Duration,
    pub max: Duration,
}

impl Default for SleepBackoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            max: Duration::from_secs(30),
        }
    }
}

impl SleepBackoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base
            .checked_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .unwrap_or(self.max)
            .min(self.max)
    }
}

impl Backoff for SleepBackoff {
    fn wait(&self, attempt: u32) {
        std::thread::sleep(self.delay(attempt));
    }
}
