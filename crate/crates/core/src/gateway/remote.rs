use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, GatewayError, LlmRequest, LlmResponse, RetryPolicy, Usage};

/// OpenAI-compatible chat-completions client.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    url: String,
    token: String,
    retry: RetryPolicy,
}

enum Failure {
    Transient(GatewayError),
    Fatal(GatewayError),
}

impl RemoteBackend {
    /// Fails with `Auth` before any network traffic when the token variable
    /// is unset.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let token = std::env::var(&cfg.auth_env)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| {
                GatewayError::Auth(format!("environment variable {} is not set", cfg.auth_env))
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            client,
            url: format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/')),
            token,
            retry: cfg.retry.clone(),
        })
    }

    pub fn request_body(req: &LlmRequest) -> Value {
        let mut messages = Vec::new();
        if !req.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_text}));
        }
        messages.push(json!({"role": "user", "content": req.user_text}));
        let mut body = json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(candidates) = &req.want_logprobs_for {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(candidates.len().clamp(2, 20).max(5));
        }
        body
    }

    /// Extracts text, candidate log-probabilities and usage from a
    /// chat-completions response body.
    pub fn parse_response(body: &Value, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let choice = body
            .pointer("/choices/0")
            .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let label_logprobs = req.want_logprobs_for.as_ref().map(|candidates| {
            let mut found: BTreeMap<String, f64> = BTreeMap::new();
            let first = choice.pointer("/logprobs/content/0");
            let mut consider = |token: &str, lp: f64| {
                let token = token.trim();
                if candidates.iter().any(|c| c == token) {
                    let slot = found.entry(token.to_string()).or_insert(f64::NEG_INFINITY);
                    *slot = slot.max(lp.min(0.0));
                }
            };
            if let Some(first) = first {
                if let (Some(t), Some(lp)) = (
                    first.get("token").and_then(Value::as_str),
                    first.get("logprob").and_then(Value::as_f64),
                ) {
                    consider(t, lp);
                }
                for alt in first
                    .get("top_logprobs")
                    .and_then(Value::as_array)
                    .into_iter()
                    .flatten()
                {
                    if let (Some(t), Some(lp)) = (
                        alt.get("token").and_then(Value::as_str),
                        alt.get("logprob").and_then(Value::as_f64),
                    ) {
                        consider(t, lp);
                    }
                }
            }
            found
        });
        let label_logprobs = label_logprobs.filter(|m| !m.is_empty());
        let usage = Usage {
            prompt_tokens: body
                .pointer("/usage/prompt_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0) as u32,
            completion_tokens: body
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0) as u32,
        };
        Ok(LlmResponse {
            text,
            label_logprobs,
            usage,
        })
    }

    fn attempt(&self, req: &LlmRequest, attempts: u32) -> Result<LlmResponse, Failure> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.token)
            .json(&Self::request_body(req))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Failure::Transient(GatewayError::Timeout { attempts })
                } else {
                    Failure::Transient(GatewayError::Transport(e.to_string()))
                }
            })?;
        let status = resp.status();
        let body: Value = resp
            .json()
            .map_err(|e| Failure::Fatal(GatewayError::Protocol(e.to_string())))
            .or_else(|e| if status.is_success() { Err(e) } else { Ok(Value::Null) })?;
        match status.as_u16() {
            200..=299 => Self::parse_response(&body, req).map_err(Failure::Fatal),
            401 | 403 => Err(Failure::Fatal(GatewayError::Auth(format!("HTTP {status}")))),
            429 => Err(Failure::Transient(GatewayError::RateLimit { attempts })),
            400 if body.to_string().contains("context_length") => {
                Err(Failure::Fatal(GatewayError::ContextLength {
                    estimated: req.estimated_prompt_tokens(),
                    window: 0,
                }))
            }
            500..=599 => Err(Failure::Transient(GatewayError::Transport(format!(
                "HTTP {status}"
            )))),
            _ => Err(Failure::Fatal(GatewayError::Protocol(format!(
                "HTTP {status}: {body}"
            )))),
        }
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let mut attempt = 1;
        loop {
            match self.attempt(req, attempt) {
                Ok(resp) => return Ok(resp),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(e)) if attempt >= self.retry.max_attempts => return Err(e),
                Err(Failure::Transient(e)) => {
                    let wait = self.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                    log::warn!("attempt {attempt} failed ({e}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
