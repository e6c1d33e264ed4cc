use std::time::Duration;

use reqwest::blocking::Client as HttpClient;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{CompletionRequest, Fingerprint, Transport, TransportError};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub api_key: Option<String>,
    /// Send `top_k`; the OpenAI schema has no such field, local servers often do.
    pub supports_top_k: bool,
    pub timeout: Duration,
}

/// OpenAI-compatible chat-completions transport (single user message).
pub struct HttpTransport {
    config: HttpConfig,
    http: HttpClient,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Result<HttpTransport, TransportError> {
        let http = HttpClient::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        Ok(HttpTransport { config, http })
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let p = &request.params;
        let mut body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": if p.sample { p.temperature } else { 0.0 },
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
        });
        if self.config.supports_top_k {
            body["top_k"] = json!(p.top_k);
        }
        body
    }
}

fn first_message_text(body: &Value) -> Result<String, TransportError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
}

impl Transport for HttpTransport {
    fn send(
        &self,
        request: &CompletionRequest,
        _fingerprint: &Fingerprint,
    ) -> Result<String, TransportError> {
        let mut builder = self
            .http
            .post(self.endpoint())
            .json(&self.request_body(request));
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_success() {
            let body: Value = response
                .json()
                .map_err(|e| TransportError::Malformed(e.to_string()))?;
            return first_message_text(&body);
        }
        let retry_after = response
            .headers()
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let detail = response.text().unwrap_or_default();
        let detail = format!("{status}: {}", detail.chars().take(300).collect::<String>());
        Err(match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => TransportError::Auth(detail),
            StatusCode::TOO_MANY_REQUESTS => TransportError::RateLimited { retry_after },
            StatusCode::REQUEST_TIMEOUT => TransportError::Transient(detail),
            s if s.is_server_error() => TransportError::Transient(detail),
            _ => TransportError::Rejected(detail),
        })
    }
}
