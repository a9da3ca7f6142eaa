//! Multi-angle and tiled extraction runs merged into one detection set.
//!
//! Every pass (one scan angle on one tile) is independent. Passes may run on
//! several workers; results are gathered in pass order and canonically sorted
//! before non-maximum suppression, so the output never depends on the worker
//! count or completion order.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ExtractionBackend, PageSource};
use crate::document::Provenance;
use crate::geometry::{back_project_bbox, compute_tile_grid, iou, normalize_deg, BBox, Dims, Point, TileRect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub tile_dims: Dims,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub angles_deg: Vec<f64>,
    pub iou_merge_threshold: f64,
    pub tile: Option<TileConfig>,
    /// Skip failed passes instead of failing the run.
    pub allow_partial: bool,
}

pub const DEFAULT_ANGLES_DEG: [f64; 6] = [0.0, 30.0, 60.0, 90.0, 120.0, 150.0];

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            angles_deg: DEFAULT_ANGLES_DEG.to_vec(),
            iou_merge_threshold: 0.5,
            tile: None,
            allow_partial: false,
        }
    }
}

impl EnsembleConfig {
    pub fn with_angles(angles: &[f64]) -> Self {
        Self {
            angles_deg: angles.to_vec(),
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), EnsembleError> {
        let bad = |m: String| Err(EnsembleError::InvalidConfig(m));
        if self.angles_deg.is_empty() {
            return bad("angle set is empty".into());
        }
        if self.angles_deg.iter().any(|a| !a.is_finite()) {
            return bad("angles must be finite".into());
        }
        let norm: Vec<f64> = self.angles_deg.iter().map(|&a| normalize_deg(a)).collect();
        for (i, a) in norm.iter().enumerate() {
            if norm[..i].iter().any(|b| (a - b).abs() < 1e-9) {
                return bad(format!("angle {} repeats modulo 360", self.angles_deg[i]));
            }
        }
        let t = self.iou_merge_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return bad(format!("iou_merge_threshold {t} outside (0, 1]"));
        }
        if let Some(tile) = &self.tile {
            tile.tile_dims
                .check()
                .map_err(|e| EnsembleError::InvalidConfig(e.to_string()))?;
            if !(tile.overlap >= 0.0 && tile.overlap < tile.tile_dims.width.min(tile.tile_dims.height)) {
                return bad(format!("tile overlap {} must lie in [0, tile size)", tile.overlap));
            }
        }
        Ok(())
    }
}

/// One recognized word in the original page frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub text: String,
    pub bbox: BBox,
    pub confidence: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleCount {
    pub angle_deg: f64,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassFailure {
    pub angle_deg: f64,
    pub tile: Option<(usize, usize)>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// Detections returned by all passes before merging.
    pub raw_detections: usize,
    pub merged_away: usize,
    /// Words no tile contains whole (synthetic pages only).
    pub boundary_loss: usize,
    pub per_angle: Vec<AngleCount>,
    pub failed_passes: Vec<PassFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub detections: Vec<Detection>,
    pub stats: EnsembleStats,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("pass at {angle_deg}°{} failed: {source}", tile.map(|(r, c)| format!(" on tile ({r}, {c})")).unwrap_or_default())]
    Pass {
        angle_deg: f64,
        tile: Option<(usize, usize)>,
        #[source]
        source: BackendError,
    },
}

/// Total order used before suppression: confidence descending, then scan
/// angle, top, left, text, and the remaining fields as tie-breakers.
pub fn canonical_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.provenance.scan_angle_deg.total_cmp(&b.provenance.scan_angle_deg))
        .then(a.bbox.top.total_cmp(&b.bbox.top))
        .then(a.bbox.left.total_cmp(&b.bbox.left))
        .then_with(|| a.text.cmp(&b.text))
        .then(a.bbox.bottom.total_cmp(&b.bbox.bottom))
        .then(a.bbox.right.total_cmp(&b.bbox.right))
        .then(a.provenance.tile_row.cmp(&b.provenance.tile_row))
        .then(a.provenance.tile_col.cmp(&b.provenance.tile_col))
        .then_with(|| a.provenance.backend_id.cmp(&b.provenance.backend_id))
}

/// Greedy non-maximum suppression: walk candidates in canonical order and keep
/// one iff its IoU with every kept detection is below `iou_threshold`.
pub fn merge_detections(candidates: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(canonical_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

struct Pass {
    tile_index: Option<usize>,
    angle_deg: f64,
}

fn scan<S: PageSource>(
    page: &S,
    angle: f64,
    tile: Option<&TileRect>,
    origin: Point,
    backend: &dyn ExtractionBackend,
) -> Result<Vec<Detection>, EnsembleError> {
    let fail = |source| EnsembleError::Pass {
        angle_deg: angle,
        tile: tile.map(|t| (t.row, t.col)),
        source,
    };
    let request = page.request(angle).map_err(fail)?;
    let response = backend.extract(&request).map_err(fail)?;
    response.check().map_err(fail)?;
    let dims = page.dims();
    let provenance = Provenance {
        scan_angle_deg: normalize_deg(angle),
        tile_row: tile.map_or(0, |t| t.row),
        tile_col: tile.map_or(0, |t| t.col),
        backend_id: response.backend_id.clone(),
    };
    let mut out = Vec::with_capacity(response.detections.len());
    for raw in response.detections {
        let home = back_project_bbox(raw.bbox, angle, request.frame_dims, dims)
            .map_err(|e| fail(BackendError::InvalidResponse(e.to_string())))?;
        let Some(home) = home.clamp_to(dims.width, dims.height) else {
            continue;
        };
        out.push(Detection {
            text: raw.text,
            bbox: home.translate(origin.x, origin.y),
            confidence: raw.confidence,
            provenance: provenance.clone(),
        });
    }
    Ok(out)
}

fn run_passes<S: PageSource + Send>(
    input: &S,
    config: &EnsembleConfig,
    backend: &dyn ExtractionBackend,
    tiles: &[TileRect],
    workers: usize,
) -> Result<EnsembleOutput, EnsembleError> {
    config.check()?;
    let pages: Vec<(S, Point)> = tiles
        .iter()
        .map(|t| {
            input.crop(&t.bbox).map_err(|source| EnsembleError::Pass {
                angle_deg: 0.0,
                tile: Some((t.row, t.col)),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let passes: Vec<Pass> = if tiles.is_empty() {
        config
            .angles_deg
            .iter()
            .map(|&a| Pass {
                tile_index: None,
                angle_deg: a,
            })
            .collect()
    } else {
        (0..tiles.len())
            .flat_map(|t| {
                config.angles_deg.iter().map(move |&a| Pass {
                    tile_index: Some(t),
                    angle_deg: a,
                })
            })
            .collect()
    };

    let run_one = |p: &Pass| match p.tile_index {
        None => scan(input, p.angle_deg, None, Point::new(0.0, 0.0), backend),
        Some(t) => scan(&pages[t].0, p.angle_deg, Some(&tiles[t]), pages[t].1, backend),
    };
    let results: Vec<Result<Vec<Detection>, EnsembleError>> = if workers <= 1 {
        passes.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EnsembleError::InvalidConfig(e.to_string()))?;
        pool.install(|| passes.par_iter().map(run_one).collect())
    };

    let mut stats = EnsembleStats {
        per_angle: config
            .angles_deg
            .iter()
            .map(|&a| AngleCount {
                angle_deg: normalize_deg(a),
                detections: 0,
            })
            .collect(),
        ..EnsembleStats::default()
    };
    // per-tile merge, then a global merge across tiles
    let mut by_tile: Vec<Vec<Detection>> = vec![Vec::new(); tiles.len().max(1)];
    for (pass, result) in passes.iter().zip(results) {
        match result {
            Ok(dets) => {
                let slot = config.angles_deg.iter().position(|&a| a == pass.angle_deg).unwrap();
                stats.per_angle[slot].detections += dets.len();
                stats.raw_detections += dets.len();
                by_tile[pass.tile_index.unwrap_or(0)].extend(dets);
            }
            Err(e) if config.allow_partial => {
                let EnsembleError::Pass { angle_deg, tile, source } = e else {
                    return Err(e);
                };
                stats.failed_passes.push(PassFailure {
                    angle_deg,
                    tile,
                    error: source.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let threshold = config.iou_merge_threshold;
    let merged: Vec<Detection> = by_tile.iter().flat_map(|d| merge_detections(d, threshold)).collect();
    let detections = merge_detections(&merged, threshold);
    stats.merged_away = stats.raw_detections - detections.len();
    stats.boundary_loss = if tiles.is_empty() { 0 } else { input.boundary_losses(tiles) };
    Ok(EnsembleOutput { detections, stats })
}

/// Scans `input` at every configured angle and merges the results.
pub fn run_rotation_ensemble<S: PageSource + Send>(
    input: &S,
    config: &EnsembleConfig,
    backend: &dyn ExtractionBackend,
    workers: usize,
) -> Result<EnsembleOutput, EnsembleError> {
    run_passes(input, config, backend, &[], workers)
}

/// Cuts `input` into the configured tile grid, runs the rotation ensemble on
/// each tile, and merges across tile seams.
pub fn run_tiling_ensemble<S: PageSource + Send>(
    input: &S,
    config: &EnsembleConfig,
    backend: &dyn ExtractionBackend,
    workers: usize,
) -> Result<EnsembleOutput, EnsembleError> {
    config.check()?;
    let tile = config
        .tile
        .as_ref()
        .ok_or_else(|| EnsembleError::InvalidConfig("tiling run without tile settings".into()))?;
    let grid = compute_tile_grid(input.dims(), tile.tile_dims, tile.overlap)
        .map_err(|e| EnsembleError::InvalidConfig(e.to_string()))?;
    run_passes(input, config, backend, &grid, workers)
}

/// Tiled run when the config carries tile settings, plain rotation run otherwise.
pub fn run_ensemble<S: PageSource + Send>(
    input: &S,
    config: &EnsembleConfig,
    backend: &dyn ExtractionBackend,
    workers: usize,
) -> Result<EnsembleOutput, EnsembleError> {
    if config.tile.is_some() {
        run_tiling_ensemble(input, config, backend, workers)
    } else {
        run_rotation_ensemble(input, config, backend, workers)
    }
}
