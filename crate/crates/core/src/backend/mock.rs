//! Deterministic backend driven by a [`SceneSpec`].
//!
//! Models an OCR engine that only reads near-horizontal text: a word is read
//! iff its baseline, seen in the scan frame, is within the alignment
//! tolerance of horizontal. Confidence falls linearly with the residual
//! angle. Words flagged `corrupt` come back misread through a
//! [`ConfusionTable`] with their confidence scaled down to
//! [`MOCK_CORRUPT_CONFIDENCE`] when aligned.

use serde::{Deserialize, Serialize};

use super::{BackendError, ExtractionBackend, ExtractionRequest, ExtractionResponse, RawDetection, RequestContent, SceneSpec};
use crate::geometry::{forward_project_point, rotated_canvas_dims, wrap180, BBox};

pub const DEFAULT_ALIGNMENT_TOLERANCE_DEG: f64 = 15.0;

/// Confidence of an aligned misread word (the 66.79% "hand" → "fund" case).
pub const MOCK_CORRUPT_CONFIDENCE: f64 = 0.6679;

/// Ordered `(pattern, replacement)` misreadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, String)>", into = "Vec<(String, String)>")]
pub struct ConfusionTable(Vec<(String, String)>);

impl ConfusionTable {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, String> {
        if let Some((p, _)) = pairs.iter().find(|(p, r)| p == r || p.is_empty()) {
            return Err(format!("confusion pattern {p:?} must be non-empty and differ from its replacement"));
        }
        Ok(Self(pairs))
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.0
    }

    /// Whole-word match first, then the first pattern occurring as a
    /// substring. Unmatched words come back unchanged.
    pub fn misread(&self, text: &str) -> String {
        if let Some((_, r)) = self.0.iter().find(|(p, _)| p == text) {
            return r.clone();
        }
        if let Some((p, r)) = self.0.iter().find(|(p, _)| text.contains(p.as_str())) {
            return text.replacen(p.as_str(), r, 1);
        }
        text.to_string()
    }
}

impl Default for ConfusionTable {
    fn default() -> Self {
        let pairs = [
            ("hand", "fund"),
            ("dear", "clear"),
            ("wife", "wise"),
            ("camp", "damp"),
            ("letter", "latter"),
            ("mother", "mather"),
            ("regiment", "regimen"),
            ("write", "wrote"),
            ("well", "wall"),
            ("home", "hame"),
        ];
        Self(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }
}

impl TryFrom<Vec<(String, String)>> for ConfusionTable {
    type Error = String;
    fn try_from(v: Vec<(String, String)>) -> Result<Self, String> {
        Self::new(v)
    }
}

impl From<ConfusionTable> for Vec<(String, String)> {
    fn from(t: ConfusionTable) -> Self {
        t.0
    }
}

fn residual(orientation_deg: f64, scan_angle_deg: f64, flip_readable: bool) -> f64 {
    let d = wrap180(orientation_deg - scan_angle_deg);
    if flip_readable && d.abs() > 90.0 {
        // upside-down text folded onto its upright reading
        if d > 0.0 {
            d - 180.0
        } else {
            d + 180.0
        }
    } else {
        d
    }
}

fn extract_scene(
    scene: &SceneSpec,
    scan_angle_deg: f64,
    tolerance_deg: f64,
    flip_readable: bool,
    confusion: &ConfusionTable,
) -> ExtractionResponse {
    let rotated = rotated_canvas_dims(scene.dims, scan_angle_deg).expect("valid scene dims");
    let detections = scene
        .words
        .iter()
        .filter_map(|w| {
            let delta = residual(w.orientation_deg, scan_angle_deg, flip_readable).abs();
            if delta > tolerance_deg {
                return None;
            }
            let bbox = BBox::hull(
                w.outline()
                    .into_iter()
                    .map(|p| forward_project_point(p, scan_angle_deg, scene.dims, rotated)),
            )?;
            let alignment = 1.0 - delta / 90.0;
            let (text, confidence) = if w.corrupt {
                (confusion.misread(&w.true_text), MOCK_CORRUPT_CONFIDENCE * alignment)
            } else {
                (w.true_text.clone(), alignment)
            };
            Some(RawDetection { text, bbox, confidence })
        })
        .collect();
    ExtractionResponse {
        detections,
        backend_id: MockBackend::ID.to_string(),
    }
}

/// Pure scene read at one scan angle. `alignment_tolerance_deg` must lie in
/// `(0, 90]`; flipped text is not readable.
pub fn mock_extract(
    scene: &SceneSpec,
    scan_angle_deg: f64,
    alignment_tolerance_deg: f64,
    confusion: &ConfusionTable,
) -> ExtractionResponse {
    extract_scene(scene, scan_angle_deg, alignment_tolerance_deg, false, confusion)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockBackend {
    pub alignment_tolerance_deg: f64,
    /// Treat text rotated by 180° as readable.
    pub flip_readable: bool,
    pub confusion: ConfusionTable,
}

impl MockBackend {
    pub const ID: &'static str = "mock";

    pub fn new(alignment_tolerance_deg: f64) -> Self {
        Self {
            alignment_tolerance_deg,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let t = self.alignment_tolerance_deg;
        if t.is_finite() && t > 0.0 && t <= 90.0 {
            Ok(())
        } else {
            Err(format!("alignment tolerance {t} outside (0, 90]"))
        }
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self {
            alignment_tolerance_deg: DEFAULT_ALIGNMENT_TOLERANCE_DEG,
            flip_readable: false,
            confusion: ConfusionTable::default(),
        }
    }
}

impl ExtractionBackend for MockBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn extract(&self, request: &ExtractionRequest) -> Result<ExtractionResponse, BackendError> {
        self.check().map_err(BackendError::InvalidRequest)?;
        let RequestContent::Scene(scene) = &request.content else {
            return Err(BackendError::InvalidRequest("mock backend reads scene content only".into()));
        };
        scene.check().map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let expected = rotated_canvas_dims(scene.dims, request.scan_angle_deg)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let fd = request.frame_dims;
        if (fd.width - expected.width).abs() > 1e-9 * expected.width || (fd.height - expected.height).abs() > 1e-9 * expected.height {
            return Err(BackendError::InvalidRequest("frame_dims do not match the rotated scene".into()));
        }
        Ok(extract_scene(
            scene,
            request.scan_angle_deg,
            self.alignment_tolerance_deg,
            self.flip_readable,
            &self.confusion,
        ))
    }
}
