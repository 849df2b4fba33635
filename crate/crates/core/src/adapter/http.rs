//! Chat-completions style inference endpoint.
//!
//! Chat: `{"model", "messages", "temperature", "max_tokens", "seed"}` ->
//! `{"choices": [{"message": {"content"}}]}`.
//! Completion: `{"model", "prompt", ...}` -> `{"choices": [{"text"}]}`.

use std::time::Duration;

use serde_json::{json, Value};

use super::backend::{BackendError, ModelBackend, ModelRequest};
use super::template::Role;

/// Bearer token for the inference endpoint and the semantic scorer.
pub const TOKEN_ENV: &str = "MTCONTAM_API_TOKEN";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndpointStyle {
    Chat,
    Completion,
}

pub struct HttpBackend {
    url: String,
    model: String,
    style: EndpointStyle,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        style: EndpointStyle,
        token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::permanent(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            model: model.into(),
            style,
            token,
            client,
        })
    }

    fn body(&self, req: &ModelRequest<'_>) -> Value {
        let mut body = json!({
            "model": self.model,
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_new_tokens,
        });
        if let Some(seed) = req.params.seed {
            body["seed"] = seed.into();
        }
        if !req.params.stop_sequences.is_empty() {
            body["stop"] = json!(req.params.stop_sequences);
        }
        match self.style {
            EndpointStyle::Chat => {
                let messages: Vec<Value> = req
                    .messages
                    .iter()
                    .map(|m| {
                        let role = if m.role == Role::Prompt { "user" } else { m.role.as_str() };
                        json!({"role": role, "content": m.content})
                    })
                    .collect();
                body["messages"] = Value::Array(messages);
            }
            EndpointStyle::Completion => {
                let prompt: Vec<&str> = req.messages.iter().map(|m| m.content.as_str()).collect();
                body["prompt"] = prompt.join("\n").into();
            }
        }
        body
    }
}

fn parse_reply(style: EndpointStyle, body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::permanent(format!("reply is not JSON: {e}")))?;
    let choice = &v["choices"][0];
    let text = match style {
        EndpointStyle::Chat => &choice["message"]["content"],
        EndpointStyle::Completion => &choice["text"],
    };
    text.as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::permanent(format!("no completion text in reply: {body}")))
}

impl ModelBackend for HttpBackend {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn is_chat(&self) -> bool {
        self.style == EndpointStyle::Chat
    }

    fn generate(&self, req: &ModelRequest<'_>) -> Result<String, BackendError> {
        let mut http = self.client.post(&self.url).json(&self.body(req));
        if let Some(token) = &self.token {
            http = http.bearer_auth(token);
        }
        let resp = http
            .send()
            .map_err(|e| BackendError::transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::transient(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::permanent(format!("status {status}: {text}")));
        }
        parse_reply(self.style, &text)
    }
}
