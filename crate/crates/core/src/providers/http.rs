//! HTTPS JSON adapters for the supported chat APIs.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    ChatProvider, ChatRequest, ChatResponse, FinishReason, ProviderError, ProviderProfile,
    RateLimiter, RetryPolicy,
};

/// Blocking JSON client with retry and rate limiting.
pub struct HttpClient {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
}

impl HttpClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
        limiter: Option<Arc<RateLimiter>>,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpClient {
            agent: config.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry,
            limiter,
        }
    }

    pub fn from_profile(profile: &ProviderProfile, default_base: &str) -> Result<Self, ProviderError> {
        let key = profile.api_key()?;
        Ok(HttpClient::new(
            profile.endpoint.clone().unwrap_or_else(|| default_base.to_string()),
            key,
            Duration::from_secs(profile.timeout_secs),
            profile.retry.clone(),
            profile
                .rate_limit_per_minute
                .map(|l| Arc::new(RateLimiter::per_minute(l))),
        ))
    }

    pub fn api_key(&self) -> &str {
        &self.api_key
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POSTs `body` to `url`, retrying transient failures with exponential
    /// backoff up to the policy's attempt budget.
    pub fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &Value,
    ) -> Result<Value, ProviderError> {
        let max_attempts = self.retry.max_attempts.max(1);
        let mut last_err = ProviderError::Transport("no attempt made".into());
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let backoff = self.retry.backoff_base_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(backoff));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.post_once(url, headers, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    tracing::warn!(attempt, max_attempts, error = %e, "transient provider failure");
                    last_err = e;
                }
                Err(e) => return Err(e),
            }
        }
        Err(match last_err {
            ProviderError::RateLimited { .. } => ProviderError::RateLimited {
                attempts: max_attempts,
            },
            other => other,
        })
    }

    fn post_once(&self, url: &str, headers: &[(&str, String)], body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        for (name, value) in headers {
            req = req.header(*name, value.as_str());
        }
        let payload = serde_json::to_vec(body).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let mut resp = req
            .send(&payload[..])
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ProviderError::MalformedResponse(format!("invalid JSON body: {e}"))),
            401 | 403 => Err(ProviderError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            429 => Err(ProviderError::RateLimited { attempts: 1 }),
            500..=599 => Err(ProviderError::Transport(format!("HTTP {status}: {}", snippet(&text)))),
            _ => Err(ProviderError::Http {
                status,
                message: snippet(&text),
            }),
        }
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(300).collect()
}

fn messages(request: &ChatRequest) -> Vec<Value> {
    let mut out = Vec::new();
    if let Some(system) = &request.system_text {
        out.push(json!({"role": "system", "content": system}));
    }
    out.push(json!({"role": "user", "content": request.user_text}));
    out
}

fn first_choice(body: &Value) -> Result<ChatResponse, ProviderError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::MalformedResponse("response has no choices".into()))?;
    let finish_reason = FinishReason::from_wire(choice.get("finish_reason").and_then(Value::as_str));
    let text = choice.pointer("/message/content").and_then(Value::as_str);
    let text = match (text, finish_reason) {
        (Some(t), _) => t.to_string(),
        (None, FinishReason::Stop) => {
            return Err(ProviderError::MalformedResponse(
                "stopped completion without content".into(),
            ))
        }
        (None, _) => String::new(),
    };
    let mut provider_metadata = BTreeMap::new();
    for key in ["id", "model", "system_fingerprint"] {
        if let Some(v) = body.get(key).and_then(Value::as_str) {
            provider_metadata.insert(key.to_string(), v.to_string());
        }
    }
    Ok(ChatResponse {
        text,
        finish_reason,
        provider_metadata,
    })
}

/// OpenAI chat-completions API and compatible endpoints (DeepSeek, vLLM, ...).
pub struct OpenAiProvider {
    client: HttpClient,
    model: String,
}

impl OpenAiProvider {
    pub fn new(client: HttpClient, model: &str) -> Self {
        OpenAiProvider {
            client,
            model: model.to_string(),
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let p = &request.params;
        let mut body = json!({
            "model": self.model,
            "messages": messages(request),
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
            "frequency_penalty": p.frequency_penalty,
            "presence_penalty": p.presence_penalty,
            "n": 1,
        });
        if let Some(seed) = p.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatProvider for OpenAiProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let url = format!("{}/chat/completions", self.client.base_url());
        let auth = format!("Bearer {}", self.client.api_key());
        let body = self.client.post_json(&url, &[("authorization", auth)], &self.request_body(request))?;
        first_choice(&body)
    }
}

/// Mistral chat API. Same shape as OpenAI except the seed is `random_seed`.
pub struct MistralProvider {
    client: HttpClient,
    model: String,
}

impl MistralProvider {
    pub fn new(client: HttpClient, model: &str) -> Self {
        MistralProvider {
            client,
            model: model.to_string(),
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let p = &request.params;
        let mut body = json!({
            "model": self.model,
            "messages": messages(request),
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
            "frequency_penalty": p.frequency_penalty,
            "presence_penalty": p.presence_penalty,
            "n": 1,
        });
        if let Some(seed) = p.seed {
            body["random_seed"] = json!(seed);
        }
        body
    }
}

impl ChatProvider for MistralProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let url = format!("{}/chat/completions", self.client.base_url());
        let auth = format!("Bearer {}", self.client.api_key());
        let body = self.client.post_json(&url, &[("authorization", auth)], &self.request_body(request))?;
        first_choice(&body)
    }
}

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Anthropic messages API. Penalties and seeds have no equivalent there and
/// are dropped with a warning.
pub struct AnthropicProvider {
    client: HttpClient,
    model: String,
}

impl AnthropicProvider {
    pub fn new(client: HttpClient, model: &str) -> Self {
        AnthropicProvider {
            client,
            model: model.to_string(),
        }
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let p = &request.params;
        let mut dropped = Vec::new();
        if p.frequency_penalty != 0.0 {
            dropped.push("frequency_penalty");
        }
        if p.presence_penalty != 0.0 {
            dropped.push("presence_penalty");
        }
        if p.seed.is_some() {
            dropped.push("seed");
        }
        if !dropped.is_empty() {
            tracing::warn!(?dropped, "parameters unsupported by the messages API were dropped");
        }
        let mut body = json!({
            "model": self.model,
            "max_tokens": p.max_tokens,
            "messages": [{"role": "user", "content": request.user_text}],
            "temperature": p.temperature,
            "top_p": p.top_p,
        });
        if let Some(system) = &request.system_text {
            body["system"] = json!(system);
        }
        body
    }
}

impl ChatProvider for AnthropicProvider {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let url = format!("{}/v1/messages", self.client.base_url());
        let headers = [
            ("x-api-key", self.client.api_key().to_string()),
            ("anthropic-version", ANTHROPIC_VERSION.to_string()),
        ];
        let body = self.client.post_json(&url, &headers, &self.request_body(request))?;
        let blocks = body
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::MalformedResponse("response has no content blocks".into()))?;
        let text: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        let finish_reason = FinishReason::from_wire(body.get("stop_reason").and_then(Value::as_str));
        if text.is_empty() && finish_reason == FinishReason::Stop {
            return Err(ProviderError::MalformedResponse(
                "stopped completion without text".into(),
            ));
        }
        let mut provider_metadata = BTreeMap::new();
        for key in ["id", "model"] {
            if let Some(v) = body.get(key).and_then(Value::as_str) {
                provider_metadata.insert(key.to_string(), v.to_string());
            }
        }
        Ok(ChatResponse {
            text,
            finish_reason,
            provider_metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ProviderParams;

    fn client() -> HttpClient {
        HttpClient::new("http://localhost:1", "k", Duration::from_secs(1), RetryPolicy::default(), None)
    }

    fn request() -> ChatRequest {
        ChatRequest::new(Some("sys".into()), "hi".into(), ProviderParams::generation())
    }

    #[test]
    fn openai_body_carries_seed_and_single_choice() {
        let body = OpenAiProvider::new(client(), "gpt-4o").request_body(&request());
        assert_eq!(body["seed"], json!(1234));
        assert_eq!(body["n"], json!(1));
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["frequency_penalty"], json!(1.0));
    }

    #[test]
    fn mistral_renames_seed() {
        let body = MistralProvider::new(client(), "mistral-large").request_body(&request());
        assert_eq!(body["random_seed"], json!(1234));
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn anthropic_drops_unsupported_parameters() {
        let body = AnthropicProvider::new(client(), "claude").request_body(&request());
        assert!(body.get("frequency_penalty").is_none());
        assert!(body.get("seed").is_none());
        assert_eq!(body["system"], "sys");
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn choice_parsing() {
        let ok = json!({"id": "x", "choices": [{"message": {"content": "PONG"}, "finish_reason": "stop"}]});
        assert_eq!(first_choice(&ok).unwrap().text, "PONG");
        let truncated = json!({"choices": [{"message": {}, "finish_reason": "length"}]});
        assert_eq!(first_choice(&truncated).unwrap().finish_reason, FinishReason::Length);
        let empty_stop = json!({"choices": [{"message": {}, "finish_reason": "stop"}]});
        assert!(first_choice(&empty_stop).is_err());
        assert!(first_choice(&json!({})).is_err());
    }
}
