use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, GatewayError};
use crate::vuln_intel::RetryPolicy;

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct LiveBackend {
    base_url: String,
    model_id: String,
    api_key: Option<String>,
    temperature: f64,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(
        base_url: impl Into<String>,
        model_id: impl Into<String>,
        api_key: Option<String>,
        temperature: f64,
    ) -> Result<Self, GatewayError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key,
            temperature,
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

impl ChatBackend for LiveBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request_text: &str, _round_index: u32) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model_id,
            "messages": [{"role": "user", "content": request_text}],
            "temperature": self.temperature,
        });
        let attempts = self.retry.attempts.max(1);
        let mut last = GatewayError::Transport("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            let mut req = self.http.post(self.endpoint()).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let value: serde_json::Value =
                        resp.json().map_err(|e| GatewayError::Malformed(e.to_string()))?;
                    return value
                        .pointer("/choices/0/message/content")
                        .and_then(|v| v.as_str())
                        .map(str::to_string)
                        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()));
                }
                Ok(resp) if resp.status() == reqwest::StatusCode::TOO_MANY_REQUESTS => {
                    last = GatewayError::RateLimited;
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last = GatewayError::Status(resp.status().as_u16());
                }
                Ok(resp) => return Err(GatewayError::Status(resp.status().as_u16())),
                Err(e) => last = GatewayError::Transport(e.to_string()),
            }
            log::warn!("chat completion attempt {} failed: {last}", attempt + 1);
        }
        Err(last)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptEntry {
    #[serde(rename = "match")]
    pattern: String,
    response: String,
}

type ResponderFn = dyn Fn(&str, u32) -> String + Send + Sync;

enum Script {
    Entries(Mutex<VecDeque<ScriptEntry>>),
    Repeat(String),
    Func(Box<ResponderFn>),
}

/// Deterministic stand-in for a chat model.
///
/// The NDJSON script holds `{"match": ..., "response": ...}` lines. Each
/// request consumes the first remaining entry whose `match` is a substring
/// of the request (or is `"*"`).
pub struct ScriptedBackend {
    model_id: String,
    script: Script,
}

impl ScriptedBackend {
    pub fn from_ndjson(text: &str) -> Result<Self, GatewayError> {
        let mut entries = VecDeque::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Script(format!("line {}: {e}", i + 1)))?;
            entries.push_back(e);
        }
        Ok(Self {
            model_id: "scripted-mock".into(),
            script: Script::Entries(Mutex::new(entries)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        Self::from_ndjson(&text)
    }

    /// Answers every request with the same text.
    pub fn repeating(response: impl Into<String>) -> Self {
        Self {
            model_id: "scripted-mock".into(),
            script: Script::Repeat(response.into()),
        }
    }

    /// Computes each response from the request text and round index.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&str, u32) -> String + Send + Sync + 'static,
    {
        Self {
            model_id: "scripted-mock".into(),
            script: Script::Func(Box::new(f)),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn remaining(&self) -> Option<usize> {
        match &self.script {
            Script::Entries(e) => Some(e.lock().unwrap().len()),
            _ => None,
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request_text: &str, round_index: u32) -> Result<String, GatewayError> {
        match &self.script {
            Script::Repeat(r) => Ok(r.clone()),
            Script::Func(f) => Ok(f(request_text, round_index)),
            Script::Entries(entries) => {
                let mut entries = entries.lock().unwrap();
                let pos = entries
                    .iter()
                    .position(|e| e.pattern == "*" || request_text.contains(&e.pattern))
                    .ok_or_else(|| GatewayError::Script("mock script exhausted".into()))?;
                Ok(entries.remove(pos).expect("position is in range").response)
            }
        }
    }

    fn order_sensitive(&self) -> bool {
        matches!(self.script, Script::Entries(_))
    }
}

/// Backend for replay mode: every request must be served from the cache.
pub struct ReplayBackend {
    model_id: String,
}

impl ReplayBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, _request_text: &str, round_index: u32) -> Result<String, GatewayError> {
        Err(GatewayError::ReplayMiss(round_index))
    }
}
