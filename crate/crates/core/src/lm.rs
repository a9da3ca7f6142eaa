//! Language-model clients: masked-token prediction for correction and
//! instruction-following generation for summaries.
//!
//! Hosted wire contracts, both `POST` with `authorization: Bearer {LM_KEY}`:
//!
//! ```text
//! {LM_ENDPOINT}/fill-mask  { "text": "... [MASK] ...", "k": 3 }
//!                       -> { "candidates": [ { "token": "hand", "p": 0.8 } ] }
//! {LM_ENDPOINT}/summarize  { "instruction": "...", "text": "...", "max_chars": 1500 }
//!                       -> { "summary": "..." }
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::Candidate;
use crate::http::{join_url, ReqwestTransport, Transport};
use crate::retry::{retry, InFlightGate, RetryPolicy, Sleeper, ThreadSleeper};

pub const MASK: &str = "[MASK]";
pub const ENV_LM_ENDPOINT: &str = "LM_ENDPOINT";
pub const ENV_LM_KEY: &str = "LM_KEY";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmError {
    #[error("language model unavailable: {0}")]
    Unavailable(String),
    #[error("language model rate limited: {0}")]
    RateLimited(String),
    #[error("language model authorization failed: {0}")]
    AuthFailed(String),
    #[error("invalid language model request: {0}")]
    InvalidRequest(String),
    #[error("invalid language model response: {0}")]
    InvalidResponse(String),
    #[error("language model gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LmError> },
}

impl LmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Unavailable(_) | Self::RateLimited(_))
    }
}

pub trait MaskedLm: Send + Sync {
    /// Up to `k` candidates for the single `[MASK]` in `text`.
    fn fill_mask(&self, text: &str, k: usize) -> Result<Vec<Candidate>, LmError>;
}

pub trait GenerativeLm: Send + Sync {
    fn summarize(&self, instruction: &str, text: &str, max_chars: usize) -> Result<String, LmError>;
}

impl<T: MaskedLm + ?Sized> MaskedLm for Arc<T> {
    fn fill_mask(&self, text: &str, k: usize) -> Result<Vec<Candidate>, LmError> {
        (**self).fill_mask(text, k)
    }
}

impl<T: GenerativeLm + ?Sized> GenerativeLm for Arc<T> {
    fn summarize(&self, instruction: &str, text: &str, max_chars: usize) -> Result<String, LmError> {
        (**self).summarize(instruction, text, max_chars)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WireCandidate {
    token: String,
    p: f64,
}

/// Table-driven masked LM. Lookup tries the exact masked text first, then
/// the longest table key occurring inside it (lexicographically first among
/// equals), so a short key such as `"your [MASK] warmly"` matches any
/// context window around it.
///
/// Table files are JSON objects mapping masked text to candidate lists:
/// `{ "I shake your [MASK] warmly": [ { "token": "hand", "p": 0.8 } ] }`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockMaskedLm {
    table: BTreeMap<String, Vec<Candidate>>,
}

impl MockMaskedLm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, masked: impl Into<String>, candidates: Vec<Candidate>) {
        self.table.insert(masked.into(), candidates);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let raw: BTreeMap<String, Vec<WireCandidate>> = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let mut lm = Self::new();
        for (key, list) in raw {
            if key.matches(MASK).count() != 1 {
                return Err(format!("table key {key:?} must contain exactly one {MASK}"));
            }
            lm.insert(
                key,
                list.into_iter()
                    .map(|c| Candidate {
                        token: c.token,
                        lm_probability: c.p,
                    })
                    .collect(),
            );
        }
        Ok(lm)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let raw: BTreeMap<&str, Vec<WireCandidate>> = self
            .table
            .iter()
            .map(|(k, v)| {
                let list = v
                    .iter()
                    .map(|c| WireCandidate {
                        token: c.token.clone(),
                        p: c.lm_probability,
                    })
                    .collect();
                (k.as_str(), list)
            })
            .collect();
        serde_json::to_vec_pretty(&raw).expect("table serializes")
    }

    fn lookup(&self, text: &str) -> Option<&Vec<Candidate>> {
        if let Some(hit) = self.table.get(text) {
            return Some(hit);
        }
        self.table
            .iter()
            .filter(|(k, _)| text.contains(k.as_str()))
            .fold(None, |best: Option<(&String, &Vec<Candidate>)>, (k, v)| match best {
                Some((b, _)) if b.len() >= k.len() => best,
                _ => Some((k, v)),
            })
            .map(|(_, v)| v)
    }
}

impl MaskedLm for MockMaskedLm {
    fn fill_mask(&self, text: &str, k: usize) -> Result<Vec<Candidate>, LmError> {
        let mut out = self.lookup(text).cloned().unwrap_or_default();
        out.sort_by(|a, b| b.lm_probability.total_cmp(&a.lm_probability));
        out.truncate(k);
        Ok(out)
    }
}

/// First sentence of the input (through its terminator), trimmed and cut to
/// `max_chars` characters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockSummarizer;

pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            return &text[..i + c.len_utf8()];
        }
    }
    text
}

impl GenerativeLm for MockSummarizer {
    fn summarize(&self, _instruction: &str, text: &str, max_chars: usize) -> Result<String, LmError> {
        Ok(first_sentence(text).chars().take(max_chars).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteLmConfig {
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for RemoteLmConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
        }
    }
}

/// HTTP client for both hosted LM routes.
pub struct RemoteLm {
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
    transport: Box<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    gate: InFlightGate,
    jitter: Mutex<ChaCha8Rng>,
}

#[derive(Serialize)]
struct FillMaskRequest<'a> {
    text: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct FillMaskResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Serialize)]
struct SummarizeRequest<'a> {
    instruction: &'a str,
    text: &'a str,
    max_chars: usize,
}

#[derive(Deserialize)]
struct SummarizeResponse {
    summary: String,
}

impl RemoteLm {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        config: &RemoteLmConfig,
        transport: Box<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
        seed: u64,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            retry: config.retry.clone(),
            transport,
            sleeper,
            gate: InFlightGate::new(config.max_in_flight),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn from_env(config: &RemoteLmConfig, seed: u64) -> Result<Self, LmError> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| LmError::AuthFailed(format!("{name} is not set")))
        };
        let endpoint = var(ENV_LM_ENDPOINT)?;
        let key = var(ENV_LM_KEY)?;
        let transport = ReqwestTransport::new(Duration::from_millis(config.timeout_ms)).map_err(LmError::Unavailable)?;
        Ok(Self::new(endpoint, key, config, Box::new(transport), Arc::new(ThreadSleeper), seed))
    }

    fn post<T: serde::de::DeserializeOwned>(&self, route: &str, body: &[u8]) -> Result<T, LmError> {
        let url = join_url(&self.endpoint, route);
        let auth = format!("Bearer {}", self.api_key);
        let once = |_| -> Result<T, LmError> {
            let _pass = self.gate.enter();
            let resp = self
                .transport
                .post_json(&url, &[("authorization", auth.as_str())], body)
                .map_err(LmError::Unavailable)?;
            match resp.status {
                200..=299 => serde_json::from_slice(&resp.body).map_err(|e| LmError::InvalidResponse(e.to_string())),
                401 | 403 => Err(LmError::AuthFailed(format!("HTTP {}", resp.status))),
                429 => Err(LmError::RateLimited("HTTP 429".into())),
                408 | 500..=599 => Err(LmError::Unavailable(format!("HTTP {}", resp.status))),
                s => Err(LmError::InvalidRequest(format!("HTTP {s}"))),
            }
        };
        let jitter = || self.jitter.lock().unwrap().random::<f64>();
        match retry(&self.retry, self.sleeper.as_ref(), jitter, LmError::is_retryable, once) {
            Ok((v, _)) => Ok(v),
            Err(f) if f.exhausted => Err(LmError::RetriesExhausted {
                attempts: f.attempts,
                last: Box::new(f.error),
            }),
            Err(f) => Err(f.error),
        }
    }
}

impl MaskedLm for RemoteLm {
    fn fill_mask(&self, text: &str, k: usize) -> Result<Vec<Candidate>, LmError> {
        let body = serde_json::to_vec(&FillMaskRequest { text, k }).map_err(|e| LmError::InvalidRequest(e.to_string()))?;
        let resp: FillMaskResponse = self.post("fill-mask", &body)?;
        Ok(resp
            .candidates
            .into_iter()
            .map(|c| Candidate {
                token: c.token,
                lm_probability: c.p,
            })
            .collect())
    }
}

impl GenerativeLm for RemoteLm {
    fn summarize(&self, instruction: &str, text: &str, max_chars: usize) -> Result<String, LmError> {
        let body = serde_json::to_vec(&SummarizeRequest {
            instruction,
            text,
            max_chars,
        })
        .map_err(|e| LmError::InvalidRequest(e.to_string()))?;
        let resp: SummarizeResponse = self.post("summarize", &body)?;
        Ok(resp.summary)
    }
}
