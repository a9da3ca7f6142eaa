//! Synthetic pages with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::ConfusionTable;
use super::{BackendError, ExtractionRequest, PageSource, RequestContent};
use crate::geometry::{normalize_deg, rotate_point, rotated_canvas_dims, BBox, Dims, Point, TileRect};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid scene parameter: {0}")]
    InvalidArgument(String),
    #[error("cannot place {requested} words: at most {capacity} fit")]
    Capacity { requested: usize, capacity: usize },
}

/// Natural size of a word along and across its baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextExtent {
    pub length: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneWord {
    pub true_text: String,
    /// Axis-aligned box in the page frame.
    pub bbox: BBox,
    /// Baseline direction in `[0, 360)`.
    pub orientation_deg: f64,
    pub corrupt: bool,
    /// When present the word is a `length × height` rectangle turned by
    /// `orientation_deg` about the bbox center, and `bbox` is its hull.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<TextExtent>,
}

impl SceneWord {
    /// Horizontal word filling `bbox`.
    pub fn aligned(text: &str, bbox: BBox) -> Self {
        Self {
            true_text: text.to_string(),
            bbox,
            orientation_deg: 0.0,
            corrupt: false,
            extent: Some(TextExtent {
                length: bbox.width(),
                height: bbox.height(),
            }),
        }
    }

    /// Word of natural size `length × height` centered at `center` with its
    /// baseline at `orientation_deg`.
    pub fn oriented(text: &str, center: Point, length: f64, height: f64, orientation_deg: f64) -> Self {
        let extent = TextExtent { length, height };
        let mut w = Self {
            true_text: text.to_string(),
            bbox: BBox {
                left: center.x - length / 2.0,
                top: center.y - height / 2.0,
                right: center.x + length / 2.0,
                bottom: center.y + height / 2.0,
            },
            orientation_deg: normalize_deg(orientation_deg),
            corrupt: false,
            extent: Some(extent),
        };
        w.bbox = BBox::hull(w.outline()).expect("four corners");
        w
    }

    pub fn with_corrupt(mut self, corrupt: bool) -> Self {
        self.corrupt = corrupt;
        self
    }

    /// Corners of the word's own rectangle in the page frame.
    pub fn outline(&self) -> [Point; 4] {
        match self.extent {
            None => self.bbox.corners(),
            Some(e) => {
                let c = self.bbox.center();
                let upright = BBox {
                    left: c.x - e.length / 2.0,
                    top: c.y - e.height / 2.0,
                    right: c.x + e.length / 2.0,
                    bottom: c.y + e.height / 2.0,
                };
                upright
                    .corners()
                    .map(|p| rotate_point(p, c, self.orientation_deg).unwrap_or(p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: Dims,
    pub words: Vec<SceneWord>,
    pub seed: u64,
    /// True when `words` is listed in reading order.
    #[serde(default)]
    pub words_in_reading_order: bool,
}

impl SceneSpec {
    pub fn check(&self) -> Result<(), SceneError> {
        self.dims
            .check()
            .map_err(|e| SceneError::InvalidArgument(e.to_string()))?;
        let page = self.dims.as_bbox();
        for (i, w) in self.words.iter().enumerate() {
            if w.true_text.is_empty() {
                return Err(SceneError::InvalidArgument(format!("word {i} has empty text")));
            }
            if !w.bbox.is_valid() || !page.contains_box(&w.bbox, 1e-9) {
                return Err(SceneError::InvalidArgument(format!("word {i} bbox not inside the page")));
            }
            if !(w.orientation_deg.is_finite() && (0.0..360.0).contains(&w.orientation_deg)) {
                return Err(SceneError::InvalidArgument(format!("word {i} orientation outside [0, 360)")));
            }
        }
        Ok(())
    }
}

impl PageSource for SceneSpec {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn request(&self, scan_angle_deg: f64) -> Result<ExtractionRequest, BackendError> {
        let frame_dims = rotated_canvas_dims(self.dims, scan_angle_deg)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Ok(ExtractionRequest {
            content: RequestContent::Scene(self.clone()),
            frame_dims,
            scan_angle_deg,
        })
    }

    /// Keeps only the words lying wholly inside `tile`, shifted into the tile
    /// frame. Words cut by the tile edge cannot be read from this tile.
    fn crop(&self, tile: &BBox) -> Result<(Self, Point), BackendError> {
        let dims = Dims::new(tile.width(), tile.height()).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let words = self
            .words
            .iter()
            .filter(|w| tile.contains_box(&w.bbox, 1e-9))
            .map(|w| {
                let mut w = w.clone();
                let b = w.bbox.translate(-tile.left, -tile.top);
                w.bbox = b.clamp_to(dims.width, dims.height).unwrap_or(b);
                w
            })
            .collect();
        Ok((
            SceneSpec {
                dims,
                words,
                seed: self.seed,
                words_in_reading_order: self.words_in_reading_order,
            },
            Point::new(tile.left, tile.top),
        ))
    }

    fn boundary_losses(&self, tiles: &[TileRect]) -> usize {
        self.words
            .iter()
            .filter(|w| !tiles.iter().any(|t| t.bbox.contains_box(&w.bbox, 1e-9)))
            .count()
    }
}

/// Knobs for [`synth_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub word_count: usize,
    pub orientations_deg: Vec<f64>,
    pub corrupt_fraction: f64,
    pub columns: usize,
    pub page: Dims,
}

impl SynthParams {
    pub fn new(seed: u64, word_count: usize, orientations_deg: Vec<f64>, corrupt_fraction: f64) -> Self {
        Self {
            seed,
            word_count,
            orientations_deg,
            corrupt_fraction,
            columns: 1,
            page: Dims {
                width: 1000.0,
                height: 1000.0,
            },
        }
    }

    pub fn columns(mut self, columns: usize) -> Self {
        self.columns = columns;
        self
    }
}

const MARGIN: f64 = 50.0;
const COLUMN_GAP: f64 = 80.0;
const CELL: f64 = 50.0;
const CELL_SLACK: f64 = 4.0;
const WORD_HEIGHT: f64 = 12.0;
const Y_JITTER: f64 = 1.5;

const VOCABULARY: &[&str] = &[
    "the", "river", "camp", "dear", "brother", "we", "marched", "through", "rain", "and", "mud", "to",
    "the", "old", "mill", "where", "our", "company", "rested", "three", "days", "I", "received",
    "your", "kind", "letter", "of", "May", "last", "give", "my", "love", "to", "all", "at", "home",
    "ridge", "creek", "road", "county", "valley", "mountain", "station", "church", "school", "ferry",
];

/// Longest word that fits a cell at this orientation.
fn max_length(orientation_deg: f64) -> f64 {
    let t = orientation_deg.to_radians();
    let (s, c) = (t.sin().abs(), t.cos().abs());
    let room = CELL - CELL_SLACK;
    let mut l = f64::INFINITY;
    if c > 1e-12 {
        l = l.min((room - WORD_HEIGHT * s) / c);
    }
    if s > 1e-12 {
        l = l.min((room - WORD_HEIGHT * c) / s);
    }
    l
}

/// Places `word_count` non-overlapping words on a grid of cells, spread evenly
/// over `columns` columns and listed in reading order (column by column, rows
/// top to bottom, cells left to right). Deterministic in `seed`.
pub fn synth_scene(params: &SynthParams) -> Result<SceneSpec, SceneError> {
    params
        .page
        .check()
        .map_err(|e| SceneError::InvalidArgument(e.to_string()))?;
    if params.orientations_deg.is_empty() {
        return Err(SceneError::InvalidArgument("orientation set is empty".into()));
    }
    if params.orientations_deg.iter().any(|o| !o.is_finite()) {
        return Err(SceneError::InvalidArgument("orientations must be finite".into()));
    }
    if !(0.0..=1.0).contains(&params.corrupt_fraction) {
        return Err(SceneError::InvalidArgument("corrupt fraction outside [0, 1]".into()));
    }
    if params.columns == 0 {
        return Err(SceneError::InvalidArgument("columns must be at least 1".into()));
    }
    let columns = params.columns;
    let col_width = (params.page.width - 2.0 * MARGIN - (columns as f64 - 1.0) * COLUMN_GAP) / columns as f64;
    let per_line = if col_width > 0.0 { (col_width / CELL).floor() as usize } else { 0 };
    let rows = ((params.page.height - 2.0 * MARGIN) / CELL).floor().max(0.0) as usize;
    let per_column = params.word_count.div_ceil(columns);
    let capacity = per_line * rows * columns;
    if params.word_count > 0 && (per_column > per_line * rows) {
        return Err(SceneError::Capacity {
            requested: params.word_count,
            capacity,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let orientations: Vec<f64> = params.orientations_deg.iter().map(|&o| normalize_deg(o)).collect();
    let confusion = ConfusionTable::default();
    let corrupt_count = (params.corrupt_fraction * params.word_count as f64).floor() as usize;
    let mut order: Vec<usize> = (0..params.word_count).collect();
    order.shuffle(&mut rng);
    let mut corrupt = vec![false; params.word_count];
    for &i in &order[..corrupt_count] {
        corrupt[i] = true;
    }

    let mut words = Vec::with_capacity(params.word_count);
    for (i, &is_corrupt) in corrupt.iter().enumerate() {
        let column = i / per_column.max(1);
        let local = i % per_column.max(1);
        let (row, cell) = (local / per_line, local % per_line);
        let x0 = MARGIN + column as f64 * (col_width + COLUMN_GAP) + cell as f64 * CELL;
        let y0 = MARGIN + row as f64 * CELL;
        let orientation = orientations[rng.random_range(0..orientations.len())];
        let lmax = max_length(orientation);
        let length = rng.random_range(0.8 * lmax..=lmax);
        let jitter = rng.random_range(-Y_JITTER..=Y_JITTER);
        let center = Point::new(x0 + CELL / 2.0, y0 + CELL / 2.0 + jitter);
        let text = if is_corrupt {
            let pairs = confusion.pairs();
            pairs[rng.random_range(0..pairs.len())].0.clone()
        } else {
            VOCABULARY[rng.random_range(0..VOCABULARY.len())].to_string()
        };
        words.push(SceneWord::oriented(&text, center, length, WORD_HEIGHT, orientation).with_corrupt(is_corrupt));
    }
    Ok(SceneSpec {
        dims: params.page,
        words,
        seed: params.seed,
        words_in_reading_order: true,
    })
}
