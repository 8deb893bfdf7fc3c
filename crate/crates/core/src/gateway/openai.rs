//! Client for servers that speak the chat-completions HTTP convention
//! (`POST {endpoint}/chat/completions`).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmBackend, LlmError, Sampling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiChatConfig {
    pub id: String,
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct OpenAiChatBackend {
    config: OpenAiChatConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for OpenAiChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiChatBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiChatBackend {
    pub fn new(config: OpenAiChatConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn transport_error(&self, err: ureq::Error) -> LlmError {
        let endpoint = self.url();
        match err {
            ureq::Error::Timeout(_) => LlmError::Timeout {
                endpoint,
                timeout: Duration::from_secs(self.config.timeout_secs),
            },
            other => LlmError::Unreachable {
                endpoint,
                detail: other.to_string(),
            },
        }
    }
}

pub(crate) fn chat_body(model: &str, system: Option<&str>, prompt: &str, sampling: Sampling) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = system {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": prompt}));
    json!({
        "model": model,
        "messages": messages,
        "temperature": sampling.temperature,
        "max_tokens": sampling.max_output_tokens,
        "stream": false,
    })
}

pub(crate) fn extract_content(body: &Value) -> Option<String> {
    let message = body.get("choices")?.get(0)?.get("message")?;
    match message.get("content")? {
        Value::String(s) => Some(s.clone()),
        // Some servers return content as an array of typed parts.
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<String>(),
        ),
        _ => None,
    }
}

impl LlmBackend for OpenAiChatBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(&self, prompt: &str, sampling: Sampling) -> Result<String, LlmError> {
        let url = self.url();
        let body = chat_body(
            &self.config.model,
            self.config.system_prompt.as_deref(),
            prompt,
            sampling,
        );
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| self.transport_error(e))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status {
                endpoint: url,
                status,
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed {
            endpoint: url.clone(),
            detail: e.to_string(),
        })?;
        extract_content(&parsed).ok_or_else(|| LlmError::Malformed {
            endpoint: url,
            detail: "missing choices[0].message.content".into(),
        })
    }
}
