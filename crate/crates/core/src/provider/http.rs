//! Chat backend for hosted models speaking the OpenAI-compatible
//! `/chat/completions` protocol.

use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatModel, ContentPart, ModelRequest, ModelResponse, ProviderError, Usage};

pub struct HttpChat {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChat {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        let endpoint = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        Ok(Self { endpoint, api_key, client })
    }

    /// Reads the credential from the named environment variable.
    pub fn from_env(base_url: &str, key_env: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let key = std::env::var(key_env)
            .map_err(|_| ProviderError::Config(format!("environment variable {key_env} is not set")))?;
        Self::new(base_url, Some(key), timeout)
    }

    pub fn request_body(req: &ModelRequest) -> Result<Value, ProviderError> {
        let mut messages = Vec::with_capacity(req.messages.len());
        for m in &req.messages {
            let mut content = Vec::with_capacity(m.content.len());
            for part in &m.content {
                content.push(match part {
                    ContentPart::Text { text } => json!({"type": "text", "text": text}),
                    ContentPart::Image { path, .. } => {
                        let bytes = std::fs::read(path)
                            .map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
                        let mime = match path.extension().and_then(|e| e.to_str()) {
                            Some("jpg" | "jpeg") => "image/jpeg",
                            _ => "image/png",
                        };
                        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                        json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}})
                    }
                });
            }
            messages.push(json!({"role": m.role, "content": content}));
        }
        Ok(json!({
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_completion_tokens": req.max_output_tokens,
        }))
    }

    pub fn parse_response(body: &Value) -> Result<ModelResponse, ProviderError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::ModelFailure("response has no message content".into()))?;
        let count = |name: &str| body.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0);
        Ok(ModelResponse {
            text: text.to_string(),
            usage: Usage { input_tokens: count("prompt_tokens"), output_tokens: count("completion_tokens") },
            latency_ms: 0,
        })
    }
}

impl ChatModel for HttpChat {
    fn chat(&self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let body = Self::request_body(req)?;
        let started = Instant::now();
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transient(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("{status}: {text}"))),
            429 => return Err(ProviderError::RateLimited(text)),
            408 | 500..=599 => return Err(ProviderError::Transient(format!("{status}: {text}"))),
            _ => return Err(ProviderError::ModelFailure(format!("{status}: {text}"))),
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::ModelFailure(format!("invalid JSON reply: {e}")))?;
        let mut out = Self::parse_response(&value)?;
        out.latency_ms = started.elapsed().as_millis() as u64;
        Ok(out)
    }
}
