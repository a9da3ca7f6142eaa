//! Extraction backends: the common contract, the synthetic scene backend used
//! as a test oracle, and the HTTP client for a hosted OCR service.

mod mock;
mod raster;
mod remote;
mod scene;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Dims, Point, TileRect};

pub use mock::{mock_extract, ConfusionTable, MockBackend, DEFAULT_ALIGNMENT_TOLERANCE_DEG, MOCK_CORRUPT_CONFIDENCE};
pub use raster::{RasterError, RasterPage};
pub use remote::{RemoteBackend, RemoteConfig, ENV_REMOTE_OCR_ENDPOINT, ENV_REMOTE_OCR_KEY};
pub use scene::{synth_scene, SceneError, SceneSpec, SceneWord, SynthParams, TextExtent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("payload too large: {bytes} bytes exceeds {limit}")]
    PayloadTooLarge { bytes: usize, limit: usize },
    #[error("authorization failed: {0}")]
    AuthFailed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<BackendError> },
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::RateLimited(_))
    }
}

/// Page content handed to a backend.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestContent {
    /// Synthetic ground truth in its unrotated frame; the scan rotation is
    /// applied by the backend.
    Scene(SceneSpec),
    /// Already-rotated raster, PNG encoded.
    Image(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRequest {
    pub content: RequestContent,
    /// Extent of the (rotated) frame the detections are reported in.
    pub frame_dims: Dims,
    pub scan_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub text: String,
    /// In the request frame.
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResponse {
    pub detections: Vec<RawDetection>,
    pub backend_id: String,
}

impl ExtractionResponse {
    pub fn check(&self) -> Result<(), BackendError> {
        for (i, d) in self.detections.iter().enumerate() {
            if !d.bbox.is_valid() {
                return Err(BackendError::InvalidResponse(format!("detection {i} has an invalid bbox")));
            }
            if !(d.confidence.is_finite() && (0.0..=1.0).contains(&d.confidence)) {
                return Err(BackendError::InvalidResponse(format!(
                    "detection {i} confidence {} outside [0, 1]",
                    d.confidence
                )));
            }
        }
        Ok(())
    }
}

/// Anything that turns a page image into text detections. Implementations
/// must tolerate concurrent calls.
pub trait ExtractionBackend: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, BackendError>;
}

impl<B: ExtractionBackend + ?Sized> ExtractionBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, BackendError> {
        (**self).extract(request)
    }
}

/// A page the ensemble can scan at arbitrary angles and cut into tiles.
pub trait PageSource: Sync {
    fn dims(&self) -> Dims;

    /// Request for a scan at `scan_angle_deg`.
    fn request(&self, scan_angle_deg: f64) -> Result<ExtractionRequest, BackendError>;

    /// Sub-page covering `tile`, plus the page-frame origin of the crop.
    fn crop(&self, tile: &BBox) -> Result<(Self, Point), BackendError>
    where
        Self: Sized;

    /// Words known to be cut by every tile of `tiles` (only knowable for
    /// synthetic pages).
    fn boundary_losses(&self, _tiles: &[TileRect]) -> usize {
        0
    }
}

/// Either kind of page the pipeline accepts.
#[derive(Debug, Clone)]
pub enum PageInput {
    Scene(SceneSpec),
    Raster(RasterPage),
}

impl PageSource for PageInput {
    fn dims(&self) -> Dims {
        match self {
            PageInput::Scene(s) => s.dims(),
            PageInput::Raster(r) => r.dims(),
        }
    }

    fn request(&self, scan_angle_deg: f64) -> Result<ExtractionRequest, BackendError> {
        match self {
            PageInput::Scene(s) => s.request(scan_angle_deg),
            PageInput::Raster(r) => r.request(scan_angle_deg),
        }
    }

    fn crop(&self, tile: &BBox) -> Result<(Self, Point), BackendError> {
        Ok(match self {
            PageInput::Scene(s) => {
                let (c, o) = s.crop(tile)?;
                (PageInput::Scene(c), o)
            }
            PageInput::Raster(r) => {
                let (c, o) = r.crop(tile)?;
                (PageInput::Raster(c), o)
            }
        })
    }

    fn boundary_losses(&self, tiles: &[TileRect]) -> usize {
        match self {
            PageInput::Scene(s) => s.boundary_losses(tiles),
            PageInput::Raster(r) => r.boundary_losses(tiles),
        }
    }
}
