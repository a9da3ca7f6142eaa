//! Client for a hosted OCR service.
//!
//! Wire contract (version 1):
//!
//! ```text
//! POST {REMOTE_OCR_ENDPOINT}
//! authorization: Bearer {REMOTE_OCR_KEY}
//! { "image": <base64 PNG>, "features": ["TEXT"] }
//!
//! 200 { "blocks": [ { "type": "WORD" | "LINE" | "PAGE", "text": "...",
//!                     "bbox": { "l": .., "t": .., "r": .., "b": .. },
//!                     "confidence": 0..100 } ] }
//! ```
//!
//! Boxes are normalized to the submitted image. Only `WORD` blocks become
//! detections; confidences are divided by 100.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ExtractionBackend, ExtractionRequest, ExtractionResponse, RawDetection, RequestContent};
use crate::geometry::BBox;
use crate::http::{ReqwestTransport, Transport};
use crate::retry::{retry, InFlightGate, RateLimiter, RetryPolicy, Sleeper, ThreadSleeper};

pub const ENV_REMOTE_OCR_ENDPOINT: &str = "REMOTE_OCR_ENDPOINT";
pub const ENV_REMOTE_OCR_KEY: &str = "REMOTE_OCR_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub max_in_flight: usize,
    pub requests_per_second: f64,
    pub max_payload_bytes: usize,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            requests_per_second: 5.0,
            max_payload_bytes: 10 * 1024 * 1024,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image: &'a str,
    features: [&'a str; 1],
}

#[derive(Deserialize)]
struct WireBox {
    l: f64,
    t: f64,
    r: f64,
    b: f64,
}

#[derive(Deserialize)]
struct WireBlock {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    text: String,
    bbox: WireBox,
    confidence: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    blocks: Vec<WireBlock>,
}

pub struct RemoteBackend {
    endpoint: String,
    api_key: String,
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    gate: InFlightGate,
    limiter: RateLimiter,
    jitter: Mutex<ChaCha8Rng>,
    attempts: AtomicU32,
}

impl RemoteBackend {
    pub const ID: &'static str = "remote";

    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        config: RemoteConfig,
        transport: Box<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
        seed: u64,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            gate: InFlightGate::new(config.max_in_flight),
            limiter: RateLimiter::new(config.requests_per_second),
            config,
            transport,
            sleeper,
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            attempts: AtomicU32::new(0),
        }
    }

    /// Reads the endpoint and key from the environment. Missing credentials
    /// are an authorization failure.
    pub fn from_env(config: RemoteConfig, seed: u64) -> Result<Self, BackendError> {
        let var = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| BackendError::AuthFailed(format!("{name} is not set")))
        };
        let endpoint = var(ENV_REMOTE_OCR_ENDPOINT)?;
        let key = var(ENV_REMOTE_OCR_KEY)?;
        let transport = ReqwestTransport::new(Duration::from_millis(config.timeout_ms)).map_err(BackendError::Unavailable)?;
        Ok(Self::new(endpoint, key, config, Box::new(transport), Arc::new(ThreadSleeper), seed))
    }

    /// Total HTTP attempts made so far.
    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn send_once(&self, body: &[u8], frame: crate::geometry::Dims) -> Result<ExtractionResponse, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let _pass = self.gate.enter();
        let wait = self.limiter.reserve();
        if !wait.is_zero() {
            self.sleeper.sleep(wait);
        }
        let auth = format!("Bearer {}", self.api_key);
        let resp = self
            .transport
            .post_json(&self.endpoint, &[("authorization", auth.as_str())], body)
            .map_err(BackendError::Unavailable)?;
        let snippet = || String::from_utf8_lossy(&resp.body[..resp.body.len().min(200)]).into_owned();
        match resp.status {
            200..=299 => decode_response(&resp.body, frame),
            401 | 403 => Err(BackendError::AuthFailed(format!("HTTP {}: {}", resp.status, snippet()))),
            413 => Err(BackendError::PayloadTooLarge {
                bytes: body.len(),
                limit: self.config.max_payload_bytes,
            }),
            429 => Err(BackendError::RateLimited(format!("HTTP 429: {}", snippet()))),
            408 | 500..=599 => Err(BackendError::Unavailable(format!("HTTP {}: {}", resp.status, snippet()))),
            s => Err(BackendError::InvalidRequest(format!("HTTP {s}: {}", snippet()))),
        }
    }
}

fn decode_response(body: &[u8], frame: crate::geometry::Dims) -> Result<ExtractionResponse, BackendError> {
    let wire: WireResponse = serde_json::from_slice(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    let mut detections = Vec::new();
    for (i, b) in wire.blocks.into_iter().enumerate() {
        if b.kind != "WORD" {
            continue;
        }
        if !(b.confidence.is_finite() && (0.0..=100.0).contains(&b.confidence)) {
            return Err(BackendError::InvalidResponse(format!("block {i} confidence {} outside 0..100", b.confidence)));
        }
        let bbox = BBox {
            left: b.bbox.l,
            top: b.bbox.t,
            right: b.bbox.r,
            bottom: b.bbox.b,
        }
        .scale(frame.width, frame.height);
        if !bbox.is_valid() {
            return Err(BackendError::InvalidResponse(format!("block {i} has an invalid bbox")));
        }
        detections.push(RawDetection {
            text: b.text,
            bbox,
            confidence: b.confidence / 100.0,
        });
    }
    Ok(ExtractionResponse {
        detections,
        backend_id: RemoteBackend::ID.to_string(),
    })
}

impl ExtractionBackend for RemoteBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, BackendError> {
        let RequestContent::Image(png) = &request.content else {
            return Err(BackendError::InvalidRequest("remote backend needs image content".into()));
        };
        let image = base64::engine::general_purpose::STANDARD.encode(png);
        let body = serde_json::to_vec(&WireRequest {
            image: &image,
            features: ["TEXT"],
        })
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        if body.len() > self.config.max_payload_bytes {
            return Err(BackendError::PayloadTooLarge {
                bytes: body.len(),
                limit: self.config.max_payload_bytes,
            });
        }
        let jitter = || self.jitter.lock().unwrap().random::<f64>();
        match retry(
            &self.config.retry,
            self.sleeper.as_ref(),
            jitter,
            BackendError::is_retryable,
            |_| self.send_once(&body, request.frame_dims),
        ) {
            Ok((resp, _)) => Ok(resp),
            Err(f) if f.exhausted => Err(BackendError::RetriesExhausted {
                attempts: f.attempts,
                last: Box::new(f.error),
            }),
            Err(f) => Err(f.error),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dims;
    use crate::http::HttpResponse;
    use std::collections::VecDeque;

    #[derive(Default)]
    struct Recording(Mutex<Vec<Duration>>);
    impl Sleeper for Recording {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    struct Scripted(Mutex<VecDeque<Result<HttpResponse, String>>>);
    impl Transport for Scripted {
        fn post_json(&self, _: &str, headers: &[(&str, &str)], body: &[u8]) -> Result<HttpResponse, String> {
            assert_eq!(headers[0], ("authorization", "Bearer secret"));
            let v: serde_json::Value = serde_json::from_slice(body).unwrap();
            assert_eq!(v["features"], serde_json::json!(["TEXT"]));
            self.0.lock().unwrap().pop_front().expect("unexpected extra request")
        }
    }

    const FIXTURE: &str = r#"{"blocks":[
        {"type":"PAGE","text":"","bbox":{"l":0,"t":0,"r":1,"b":1},"confidence":99.0},
        {"type":"LINE","text":"I shake your fund","bbox":{"l":0.1,"t":0.1,"r":0.9,"b":0.2},"confidence":80.0},
        {"type":"WORD","text":"I","bbox":{"l":0.1,"t":0.1,"r":0.15,"b":0.2},"confidence":99.5},
        {"type":"WORD","text":"shake","bbox":{"l":0.2,"t":0.1,"r":0.4,"b":0.2},"confidence":97.25},
        {"type":"WORD","text":"fund","bbox":{"l":0.5,"t":0.1,"r":0.7,"b":0.2},"confidence":66.79}
    ]}"#;

    fn ok(body: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: 200, body: body.as_bytes().to_vec() })
    }

    fn status(s: u16) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: s, body: b"{}".to_vec() })
    }

    fn backend(script: Vec<Result<HttpResponse, String>>, sleeper: Arc<Recording>) -> RemoteBackend {
        let config = RemoteConfig {
            requests_per_second: 0.0,
            ..RemoteConfig::default()
        };
        RemoteBackend::new("http://ocr.invalid/v1", "secret", config, Box::new(Scripted(Mutex::new(script.into()))), sleeper, 3)
    }

    fn request() -> ExtractionRequest {
        ExtractionRequest {
            content: RequestContent::Image(vec![1, 2, 3]),
            frame_dims: Dims::new(200.0, 100.0).unwrap(),
            scan_angle_deg: 0.0,
        }
    }

    #[test]
    fn maps_word_blocks() {
        let b = backend(vec![ok(FIXTURE)], Arc::default());
        let r = b.extract(&request()).unwrap();
        assert_eq!(r.detections.len(), 3);
        let conf: Vec<f64> = r.detections.iter().map(|d| d.confidence).collect();
        assert_eq!(conf, vec![0.995, 0.9725, 0.6679]);
        assert_eq!(r.detections[2].text, "fund");
        let bb = r.detections[1].bbox;
        assert!((bb.left - 40.0).abs() < 1e-9 && (bb.right - 80.0).abs() < 1e-9 && (bb.bottom - 20.0).abs() < 1e-9);
        assert_eq!(r.backend_id, "remote");
        assert_eq!(b.attempts(), 1);
    }

    #[test]
    fn retries_transient_failures() {
        let sleeper = Arc::new(Recording::default());
        let b = backend(vec![status(503), Err("connection reset".into()), ok(FIXTURE)], sleeper.clone());
        assert!(b.extract(&request()).is_ok());
        assert_eq!(b.attempts(), 3);
        let total: Duration = sleeper.0.lock().unwrap().iter().sum();
        assert!(total >= Duration::from_secs(3), "{total:?}");
    }

    #[test]
    fn rate_limit_becomes_terminal() {
        let b = backend((0..5).map(|_| status(429)).collect(), Arc::default());
        match b.extract(&request()) {
            Err(BackendError::RetriesExhausted { attempts: 5, last }) => assert!(matches!(*last, BackendError::RateLimited(_))),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(b.attempts(), 5);
    }

    #[test]
    fn terminal_errors_not_retried() {
        let sleeper = Arc::new(Recording::default());
        let b = backend(vec![status(401)], sleeper.clone());
        assert!(matches!(b.extract(&request()), Err(BackendError::AuthFailed(_))));
        assert_eq!(b.attempts(), 1);

        let b = backend(vec![status(413)], sleeper.clone());
        assert!(matches!(b.extract(&request()), Err(BackendError::PayloadTooLarge { .. })));
        assert_eq!(b.attempts(), 1);
        assert!(sleeper.0.lock().unwrap().is_empty());
    }

    #[test]
    fn oversized_payload_never_sent() {
        let mut b = backend(vec![], Arc::default());
        b.config.max_payload_bytes = 16;
        let mut req = request();
        req.content = RequestContent::Image(vec![0; 64]);
        assert!(matches!(b.extract(&req), Err(BackendError::PayloadTooLarge { .. })));
        assert_eq!(b.attempts(), 0);
    }

    #[test]
    fn bad_confidence_rejected() {
        let body = r#"{"blocks":[{"type":"WORD","text":"x","bbox":{"l":0,"t":0,"r":1,"b":1},"confidence":140}]}"#;
        let b = backend(vec![ok(body)], Arc::default());
        assert!(matches!(b.extract(&request()), Err(BackendError::InvalidResponse(_))));
    }

    #[test]
    fn scene_content_rejected() {
        let b = backend(vec![], Arc::default());
        let mut req = request();
        req.content = RequestContent::Scene(crate::backend::SceneSpec {
            dims: req.frame_dims,
            words: vec![],
            seed: 0,
            words_in_reading_order: false,
        });
        assert!(matches!(b.extract(&req), Err(BackendError::InvalidRequest(_))));
    }
}
