//! Chat-completion HTTP provider.
//!
//! Sends `{"model", "messages": [system, user], "temperature", "max_tokens",
//! "seed"}` to the endpoint and reads `choices[0].message.content` plus the
//! optional `usage.prompt_tokens` / `usage.completion_tokens` counts.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::provider::Provider;
use crate::request::{CompletionRequest, CompletionResult};
use crate::tokens::TokenEstimator;
use crate::LlmError;

pub const ENV_ENDPOINT: &str = "BEAR_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "BEAR_LLM_MODEL";
pub const ENV_KEY: &str = "BEAR_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Overrides `BEAR_LLM_ENDPOINT`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Overrides `BEAR_LLM_MODEL`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: None,
            model: None,
            max_retries: 4,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
            max_in_flight: 4,
            timeout_secs: 120,
        }
    }
}

impl RemoteConfig {
    /// Delay before retry number `attempt` (0-based): base × 2^attempt, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteProvider {
    endpoint: String,
    model: String,
    key: String,
    config: RemoteConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

enum Failure {
    Retry(String),
    Fatal(LlmError),
}

impl RemoteProvider {
    /// Endpoint and model come from the config or the environment; the key
    /// always comes from `BEAR_LLM_KEY`.
    pub fn from_config(config: &RemoteConfig) -> Result<Self, LlmError> {
        let env = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let missing = |name: &str| LlmError::Config(format!("{name} is not set"));
        let endpoint = config.endpoint.clone().or_else(|| env(ENV_ENDPOINT)).ok_or_else(|| missing(ENV_ENDPOINT))?;
        let model = config.model.clone().or_else(|| env(ENV_MODEL)).ok_or_else(|| missing(ENV_MODEL))?;
        let key = env(ENV_KEY).ok_or_else(|| missing(ENV_KEY))?;
        Ok(RemoteProvider::new(endpoint, model, key, config.clone()))
    }

    pub fn new(endpoint: String, model: String, key: String, config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteProvider {
            endpoint,
            model,
            key,
            in_flight: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                cap: config.max_in_flight.max(1),
            },
            config,
            agent,
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, request: &CompletionRequest, body: &str) -> Result<CompletionResult, Failure> {
        let _permit = self.in_flight.acquire();
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Failure::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        match status {
            200..=299 => parse_reply(request, &text).map_err(Failure::Fatal),
            408 | 429 | 500..=599 => Err(Failure::Retry(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(LlmError::Http {
                status,
                body: text.chars().take(500).collect(),
            })),
        }
    }
}

fn parse_reply(request: &CompletionRequest, text: &str) -> Result<CompletionResult, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::Malformed(format!("reply is not JSON: {e}")))?;
    let content = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Malformed("reply lacks choices[0].message.content".into()))?
        .to_string();
    let est = TokenEstimator::default();
    Ok(CompletionResult {
        input_tokens: v["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or_else(|| request.estimated_input_tokens(&est)),
        output_tokens: v["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| est.estimate(&content)),
        text: content,
    })
}

impl Provider for RemoteProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let body = self.body(request).to_string();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(self.config.backoff(attempt - 1));
            }
            match self.attempt(request, &body) {
                Ok(result) => return Ok(result),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(message)) => last = message,
            }
        }
        Err(LlmError::Transport {
            attempts: self.config.max_retries + 1,
            message: last,
        })
    }

    fn name(&self) -> &str {
        "remote-http"
    }
}
