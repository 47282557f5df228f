//! Provider-agnostic chat completion with a transcript cache.

mod backends;
mod choice;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use backends::{LiveBackend, ReplayBackend, ScriptedBackend};
pub use choice::{extract_commit_choice, AbstainReason, CommitChoice};

use crate::fsutil::{sha256_hex, write_atomic};
use crate::prompt_forge::PromptBundle;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("rate limited by provider")]
    RateLimited,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("mock script error: {0}")]
    Script(String),
    #[error("replay cache has no transcript for this prompt (round {0})")]
    ReplayMiss(u32),
    #[error("transcript cache i/o on {0}: {1}")]
    Cache(PathBuf, #[source] std::io::Error),
}

/// One model call: the prompt sent and the text received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub prompt_hash: String,
    pub request_text: String,
    pub response_text: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub round_index: u32,
}

/// Stable cache key over the request text, model id and round index.
pub fn prompt_hash(request_text: &str, model_id: &str, round_index: u32) -> String {
    sha256_hex(&[
        request_text.as_bytes(),
        model_id.as_bytes(),
        round_index.to_string().as_bytes(),
    ])
}

pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, request_text: &str, round_index: u32) -> Result<String, GatewayError>;

    /// True when responses depend on call order, so callers must not issue
    /// requests concurrently if they need reproducible results.
    fn order_sensitive(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Serve hits from disk, store misses.
    ReadWrite,
    /// Record transcripts but always call the backend.
    WriteOnly,
    /// Never touch the backend for cached prompts; misses go to the backend
    /// (which for replay is an error).
    ReadOnly,
}

struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.freed.wait(slots).unwrap();
        }
        *slots -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    cache: Option<(PathBuf, CacheMode)>,
    limiter: Limiter,
    upstream_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            cache: None,
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            upstream_calls: AtomicUsize::new(0),
        }
    }

    /// Cache transcripts under `<cache_dir>/llm/<prompt_hash>.json`.
    pub fn with_cache(mut self, cache_dir: &Path, mode: CacheMode) -> Self {
        self.cache = Some((cache_dir.join("llm"), mode));
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn order_sensitive(&self) -> bool {
        self.backend.order_sensitive()
    }

    /// Number of requests that reached the backend.
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn ask(&self, prompt: &PromptBundle, round_index: u32) -> Result<DialogueTranscript, GatewayError> {
        self.ask_text(prompt.text(), round_index)
    }

    pub fn ask_text(&self, request_text: &str, round_index: u32) -> Result<DialogueTranscript, GatewayError> {
        let model_id = self.backend.model_id().to_string();
        let hash = prompt_hash(request_text, &model_id, round_index);
        let cache_file = self.cache.as_ref().map(|(dir, mode)| (dir.join(format!("{hash}.json")), *mode));

        if let Some((path, mode)) = &cache_file {
            if *mode != CacheMode::WriteOnly {
                if let Ok(bytes) = std::fs::read(path) {
                    match serde_json::from_slice::<DialogueTranscript>(&bytes) {
                        Ok(t) if t.request_text == request_text => return Ok(t),
                        Ok(_) => log::warn!("cache entry {} has a different request; ignoring", path.display()),
                        Err(e) => log::warn!("unreadable cache entry {}: {e}", path.display()),
                    }
                }
            }
        }

        let started = Instant::now();
        let response_text = {
            let _slot = self.limiter.acquire();
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            self.backend.complete(request_text, round_index)?
        };
        let transcript = DialogueTranscript {
            prompt_hash: hash,
            request_text: request_text.to_string(),
            response_text,
            model_id,
            latency_ms: started.elapsed().as_millis() as u64,
            round_index,
        };
        if let Some((path, mode)) = cache_file {
            if mode != CacheMode::ReadOnly {
                let bytes = serde_json::to_vec_pretty(&transcript).expect("transcript serializes");
                write_atomic(&path, &bytes).map_err(|e| GatewayError::Cache(path.clone(), e))?;
            }
        }
        Ok(transcript)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::StubServer;
    use crate::vuln_intel::RetryPolicy;
    use std::time::Duration;

    const COMPLETION: &str = r#"{"choices":[{"message":{"role":"assistant","content":"<answer>abc1234</answer>"}}]}"#;

    fn live(server: &StubServer) -> LiveBackend {
        LiveBackend::new(server.url(), "test-model", Some("k".into()), 0.7)
            .unwrap()
            .with_retry(RetryPolicy {
                attempts: 3,
                initial_backoff: Duration::from_millis(1),
            })
    }

    #[test]
    fn scripted_response() {
        let gw = Gateway::new(Box::new(ScriptedBackend::repeating("<answer>abc1234</answer>")));
        let t = gw.ask_text("prompt", 0).unwrap();
        assert_eq!(t.response_text, "<answer>abc1234</answer>");
        assert_eq!(t.prompt_hash, prompt_hash("prompt", "scripted-mock", 0));
    }

    #[test]
    fn script_consumes_in_order_per_match() {
        let script = concat!(
            r#"{"match":"alpha","response":"a1"}"#,
            "\n",
            r#"{"match":"*","response":"any"}"#,
            "\n",
            r#"{"match":"alpha","response":"a2"}"#,
            "\n"
        );
        let gw = Gateway::new(Box::new(ScriptedBackend::from_ndjson(script).unwrap()));
        assert_eq!(gw.ask_text("alpha", 0).unwrap().response_text, "a1");
        assert_eq!(gw.ask_text("beta", 0).unwrap().response_text, "any");
        assert_eq!(gw.ask_text("alpha", 0).unwrap().response_text, "a2");
        assert!(matches!(gw.ask_text("alpha", 0), Err(GatewayError::Script(_))));
    }

    #[test]
    fn live_calls_are_cached_per_round() {
        let server = StubServer::start(|_| (200, COMPLETION.into()));
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Box::new(live(&server))).with_cache(dir.path(), CacheMode::ReadWrite);
        let a = gw.ask_text("same prompt", 0).unwrap();
        let b = gw.ask_text("same prompt", 0).unwrap();
        assert_eq!(a.response_text, b.response_text);
        assert_eq!(server.request_count(), 1);
        gw.ask_text("same prompt", 1).unwrap();
        assert_eq!(server.request_count(), 2);
        assert!(dir.path().join("llm").join(format!("{}.json", a.prompt_hash)).exists());

        let body: serde_json::Value = serde_json::from_str(&server.requests()[0].body).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(server.requests()[0].path, "/chat/completions");
    }

    #[test]
    fn rate_limit_and_server_errors_exhaust_retries() {
        let server = StubServer::start(|_| (429, "{}".into()));
        let gw = Gateway::new(Box::new(live(&server)));
        assert!(matches!(gw.ask_text("p", 0), Err(GatewayError::RateLimited)));
        assert_eq!(server.request_count(), 3);

        let server = StubServer::start(|_| (400, "{}".into()));
        let gw = Gateway::new(Box::new(live(&server)));
        assert!(matches!(gw.ask_text("p", 0), Err(GatewayError::Status(400))));
        assert_eq!(server.request_count(), 1);
    }

    #[test]
    fn replay_reads_only_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let recorder = Gateway::new(Box::new(ScriptedBackend::repeating("r")))
            .with_cache(dir.path(), CacheMode::WriteOnly);
        recorder.ask_text("p", 3).unwrap();
        let replay = Gateway::new(Box::new(ReplayBackend::new("scripted-mock"))).with_cache(dir.path(), CacheMode::ReadOnly);
        assert_eq!(replay.ask_text("p", 3).unwrap().response_text, "r");
        assert!(matches!(replay.ask_text("p", 4), Err(GatewayError::ReplayMiss(4))));
        assert_eq!(replay.upstream_calls(), 1);
    }

    #[test]
    fn limiter_bounds_in_flight() {
        use std::sync::atomic::AtomicUsize;
        use std::sync::Arc;
        let live_now = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (l, p) = (Arc::clone(&live_now), Arc::clone(&peak));
        let backend = ScriptedBackend::from_fn(move |_, _| {
            let n = l.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(n, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            l.fetch_sub(1, Ordering::SeqCst);
            "x".into()
        });
        let gw = Gateway::new(Box::new(backend)).with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..6 {
                let gw = &gw;
                s.spawn(move || gw.ask_text("p", i).unwrap());
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.upstream_calls(), 6);
    }
}
