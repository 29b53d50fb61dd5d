//! Blocking HTTP client for a remote captioning/planning/scoring backend.
//!
//! Every task shares one wire format: a JSON object
//! `{task, modality, payload, context}` POSTed to the endpoint, answered by
//! `{text?, features?, actions?, scores?}`. Audio payloads travel as base64
//! 16-bit WAV; video payloads as the feature series itself.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::{encode_wav, AudioBuffer, WavFormat};
use crate::error::{Error, Result};
use crate::video::VideoFeatureSeries;

pub const URL_ENV: &str = "AVALIGN_BACKEND_URL";
pub const TOKEN_ENV: &str = "AVALIGN_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub url: Option<String>,
    /// Sent as a bearer token when present.
    pub token: Option<String>,
    pub timeout_ms: u64,
    /// Extra attempts after the first, for connection failures, timeouts and 5xx.
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub max_payload_bytes: usize,
    /// Upper bound on concurrent requests through one client.
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            url: None,
            token: None,
            timeout_ms: 10_000,
            retries: 2,
            retry_backoff_ms: 200,
            max_payload_bytes: 8 << 20,
            max_in_flight: 4,
        }
    }
}

impl BackendConfig {
    /// Overrides `url` and `token` from the environment when those are set.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(URL_ENV) {
            if !url.is_empty() {
                self.url = Some(url);
            }
        }
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            if !token.is_empty() {
                self.token = Some(token);
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Caption,
    Plan,
    Score,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendRequest {
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
    pub payload: Value,
    pub context: Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct BackendResponse {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub features: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub actions: Option<Value>,
    #[serde(default)]
    pub scores: Option<Value>,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Cheap to clone; clones share the in-flight bound.
#[derive(Debug, Clone)]
pub struct BackendClient {
    cfg: BackendConfig,
    url: String,
    http: reqwest::blocking::Client,
    gate: Arc<Gate>,
}

enum Attempt {
    Retry(Error),
    Fatal(Error),
}

impl BackendClient {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        let url = cfg
            .url
            .clone()
            .ok_or_else(|| Error::Config(format!("backend url not configured (set {URL_ENV})")))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            gate: Arc::new(Gate::new(cfg.max_in_flight)),
            cfg,
            url,
            http,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn audio_payload(&self, audio: &AudioBuffer) -> Result<Value> {
        let wav = encode_wav(audio, WavFormat::Pcm16)?;
        if wav.len() > self.cfg.max_payload_bytes {
            return Err(Error::InvalidValue(format!(
                "audio payload of {} bytes exceeds the {} byte limit",
                wav.len(),
                self.cfg.max_payload_bytes
            )));
        }
        Ok(Value::String(
            base64::engine::general_purpose::STANDARD.encode(wav),
        ))
    }

    pub fn video_payload(&self, v: &VideoFeatureSeries) -> Result<Value> {
        Ok(serde_json::to_value(v)?)
    }

    /// Sends one request, retrying transient failures.
    pub fn call(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let body = serde_json::to_string(req)?;
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.cfg.retries {
                        return Err(e);
                    }
                    attempt += 1;
                    log::warn!("backend attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(Duration::from_millis(
                        self.cfg.retry_backoff_ms * attempt as u64,
                    ));
                }
            }
        }
    }

    fn attempt(&self, body: &str) -> std::result::Result<BackendResponse, Attempt> {
        let mut rb = self
            .http
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body.to_owned());
        if let Some(token) = &self.cfg.token {
            rb = rb.bearer_auth(token);
        }
        let resp = rb.send().map_err(|e| Attempt::Retry(self.transport_error(e)))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Attempt::Retry(self.transport_error(e)))?;
        if status.is_server_error() {
            return Err(Attempt::Retry(self.unreachable(format!("HTTP {status}"))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(self.unreachable(format!("HTTP {status}"))));
        }
        serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(Error::BackendMalformedResponse(format!(
                "{e}; body starts {:?}",
                text.chars().take(80).collect::<String>()
            )))
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> Error {
        if e.is_timeout() {
            Error::Timeout(self.cfg.timeout_ms)
        } else {
            self.unreachable(e.to_string())
        }
    }

    fn unreachable(&self, reason: String) -> Error {
        Error::BackendUnreachable {
            url: self.url.clone(),
            reason,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_url_is_a_config_error() {
        assert!(matches!(
            BackendClient::new(BackendConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn request_shape() {
        let req = BackendRequest {
            task: Task::Plan,
            modality: None,
            payload: Value::Null,
            context: serde_json::json!({"cycle": 0}),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"task":"plan","payload":null,"context":{"cycle":0}}"#
        );
    }

    #[test]
    fn oversized_audio_payload_is_refused() {
        let client = BackendClient::new(BackendConfig {
            url: Some("http://127.0.0.1:9".into()),
            max_payload_bytes: 100,
            ..Default::default()
        })
        .unwrap();
        let audio = AudioBuffer::silence(1000, 8000);
        assert!(matches!(client.audio_payload(&audio), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let peak = Arc::new(Mutex::new((0usize, 0usize)));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let gate = gate.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    {
                        let mut g = peak.lock().unwrap();
                        g.0 += 1;
                        g.1 = g.1.max(g.0);
                    }
                    std::thread::sleep(Duration::from_millis(20));
                    peak.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.lock().unwrap().1 <= 2);
    }
}
