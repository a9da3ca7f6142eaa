//! End-to-end run: extract → merge → lines → reading order → correction →
//! summary → validated manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ExtractionBackend, MockBackend, PageInput, PageSource, RasterPage, RemoteBackend, RemoteConfig, SceneSpec};
use crate::correction::{apply_corrections, CorrectionConfig};
use crate::document::{validate_document, Document, PageBlock, WordBlock};
use crate::ensemble::{run_ensemble, AngleCount, Detection, EnsembleConfig, EnsembleError, EnsembleStats};
use crate::geometry::Dims;
use crate::layout::{group_words_into_lines, linearize_text, xy_cut, LayoutError, LayoutParams};
use crate::lm::{GenerativeLm, LmError, MaskedLm, MockMaskedLm, MockSummarizer, RemoteLm, RemoteLmConfig};
use crate::manifest::{write_manifest, ManifestError, MANIFEST_EXTENSION};
use crate::summarization::{summarize, SummaryConfig};

/// Stage seeds are the root seed plus a fixed offset.
pub const SEED_OFFSET_BACKEND: u64 = 101;
pub const SEED_OFFSET_LM: u64 = 202;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub kind: LmKind,
    /// Lookup table for the mock masked LM; without one nothing is replaced.
    pub mock_table: Option<PathBuf>,
    pub remote: RemoteLmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub mock: MockBackend,
    pub remote: RemoteConfig,
    pub ensemble: EnsembleConfig,
    pub layout: LayoutParams,
    pub correction: CorrectionConfig,
    pub summary: SummaryConfig,
    pub lm: LmConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            mock: MockBackend::default(),
            remote: RemoteConfig::default(),
            ensemble: EnsembleConfig::default(),
            layout: LayoutParams::default(),
            correction: CorrectionConfig::default(),
            summary: SummaryConfig::default(),
            lm: LmConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn check(&self) -> Result<(), PipelineError> {
        let cfg = PipelineError::Config;
        self.mock.check().map_err(cfg)?;
        self.ensemble.check().map_err(|e| cfg(e.to_string()))?;
        self.layout.check().map_err(cfg)?;
        self.correction.check().map_err(|e| cfg(e.to_string()))?;
        self.summary.check().map_err(|e| cfg(e.to_string()))?;
        if self.remote.max_payload_bytes == 0 {
            return Err(cfg("remote.max_payload_bytes must be positive".into()));
        }
        Ok(())
    }

    /// Parses a JSON config; absent fields take their defaults.
    pub fn from_json(bytes: &[u8]) -> Result<Self, PipelineError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| PipelineError::Config(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Detections from all passes before merging.
    pub words_detected: usize,
    /// Detections suppressed as duplicates; the manifest holds
    /// `words_detected - words_merged_away` words.
    pub words_merged_away: usize,
    pub words_flagged: usize,
    pub words_replaced: usize,
    pub boundary_loss: usize,
    pub per_angle_detection_counts: Vec<AngleCount>,
    pub layout_fallbacks: usize,
    /// Always 0 inside manifests so reruns stay byte-identical; the real
    /// figure is returned by [`run_pipeline`].
    pub wall_time_ms: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[input] {0}")]
    Input(String),
    #[error("[extract] {0}")]
    Extract(EnsembleError),
    #[error("[extract] {0}")]
    Backend(BackendError),
    #[error("[layout] {0}")]
    Layout(LayoutError),
    #[error("[lm] {0}")]
    Lm(LmError),
    #[error("[validate] {}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validate(Vec<crate::document::Violation>),
    #[error("[write] {0}")]
    Write(ManifestError),
}

impl PipelineError {
    /// 2 bad arguments or config, 3 terminal backend/LM failure, 4 invalid
    /// output, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) | Self::Extract(EnsembleError::InvalidConfig(_)) => 2,
            Self::Extract(_) | Self::Backend(_) | Self::Lm(_) => 3,
            Self::Layout(_) | Self::Validate(_) => 4,
            Self::Write(ManifestError::Io { .. }) => 1,
            Self::Write(_) => 4,
        }
    }
}

/// Extraction output saved between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub source_uri: String,
    /// Page extent the boxes are expressed in.
    pub frame: Dims,
    pub detections: Vec<Detection>,
    pub stats: EnsembleStats,
}

/// Scene JSON for `.json` paths, a raster image otherwise.
pub fn load_input(path: &Path) -> Result<PageInput, PipelineError> {
    let input = |m: String| PipelineError::Input(format!("{}: {m}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let bytes = std::fs::read(path).map_err(|e| input(e.to_string()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        let scene: SceneSpec =
            serde_path_to_error::deserialize(de).map_err(|e| input(format!("{}: {}", e.path(), e.inner())))?;
        scene.check().map_err(|e| input(e.to_string()))?;
        Ok(PageInput::Scene(scene))
    } else {
        RasterPage::open(path).map(PageInput::Raster).map_err(|e| input(e.to_string()))
    }
}

pub fn build_backend(config: &PipelineConfig) -> Result<Box<dyn ExtractionBackend>, PipelineError> {
    Ok(match config.backend {
        BackendKind::Mock => Box::new(config.mock.clone()),
        BackendKind::Remote => Box::new(
            RemoteBackend::from_env(config.remote.clone(), config.seed.wrapping_add(SEED_OFFSET_BACKEND))
                .map_err(PipelineError::Backend)?,
        ),
    })
}

pub struct LmClients {
    pub masked: Box<dyn MaskedLm>,
    pub generative: Box<dyn GenerativeLm>,
}

pub fn build_lm(config: &PipelineConfig) -> Result<LmClients, PipelineError> {
    match config.lm.kind {
        LmKind::Mock => {
            let table = match &config.lm.mock_table {
                Some(p) => MockMaskedLm::load(p).map_err(PipelineError::Config)?,
                None => MockMaskedLm::new(),
            };
            Ok(LmClients {
                masked: Box::new(table),
                generative: Box::new(MockSummarizer),
            })
        }
        LmKind::Remote => {
            let lm = Arc::new(
                RemoteLm::from_env(&config.lm.remote, config.seed.wrapping_add(SEED_OFFSET_LM)).map_err(PipelineError::Lm)?,
            );
            Ok(LmClients {
                masked: Box::new(lm.clone()),
                generative: Box::new(lm),
            })
        }
    }
}

fn check_pairing(config: &PipelineConfig, input: &PageInput) -> Result<(), PipelineError> {
    match (config.backend, input) {
        (BackendKind::Mock, PageInput::Raster(_)) => Err(PipelineError::Config("the mock backend reads scene files only".into())),
        (BackendKind::Remote, PageInput::Scene(_)) => Err(PipelineError::Config("the remote backend reads images only".into())),
        _ => Ok(()),
    }
}

/// Single-page document from page-frame detections: words normalized and
/// numbered top to bottom, grouped into lines, lines put in reading order.
/// Returns the document and the number of layout fallbacks.
pub fn document_from_detections(
    id: &str,
    source_uri: &str,
    dims: Dims,
    detections: &[Detection],
    config: &PipelineConfig,
) -> (Document, usize) {
    let mut dets: Vec<&Detection> = detections.iter().collect();
    dets.sort_by(|a, b| {
        a.bbox
            .top
            .total_cmp(&b.bbox.top)
            .then(a.bbox.left.total_cmp(&b.bbox.left))
            .then_with(|| crate::ensemble::canonical_order(a, b))
    });
    let words: Vec<WordBlock> = dets
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            let bbox = d.bbox.scale(1.0 / dims.width, 1.0 / dims.height).clamp_to(1.0, 1.0)?;
            Some(WordBlock {
                id: format!("w{i:04}"),
                text: d.text.clone(),
                bbox,
                confidence: d.confidence,
                provenance: d.provenance.clone(),
                corrected_from: None,
            })
        })
        .collect();
    let lines = group_words_into_lines(&words, &config.layout, "p1-");
    let ordered = xy_cut(&lines, Dims { width: 1.0, height: 1.0 }, &config.layout, &[]);
    let page = PageBlock {
        id: "p1".into(),
        page_number: 1,
        dims,
        line_ids: ordered.lines.iter().map(|l| l.id.clone()).collect(),
    };
    let doc = Document {
        id: id.to_string(),
        source_uri: source_uri.to_string(),
        pages: vec![page],
        lines: ordered.lines,
        words,
        summary: None,
        corrections: Vec::new(),
        config_snapshot: config.clone(),
        stats: RunStats::default(),
    };
    (doc, ordered.fallbacks)
}

/// Fills `summary` from the linearized text. A failed summary leaves it
/// absent and returns the reason.
pub fn summarize_document(doc: &mut Document, config: &SummaryConfig, lm: &dyn GenerativeLm) -> Result<Option<String>, PipelineError> {
    let text = linearize_text(doc).map_err(PipelineError::Layout)?;
    if text.trim().is_empty() {
        doc.summary = None;
        return Ok(None);
    }
    match summarize(&text, config, lm) {
        Ok(s) => {
            doc.summary = Some(s);
            Ok(None)
        }
        Err(e) => {
            doc.summary = None;
            Ok(Some(e.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRun {
    pub document: Document,
    pub stats: RunStats,
    pub warnings: Vec<String>,
}

/// Runs every stage on one page with the given clients. The document is
/// validated but not written.
pub fn process_page(
    config: &PipelineConfig,
    input: &PageInput,
    id: &str,
    source_uri: &str,
    backend: &dyn ExtractionBackend,
    lm: &LmClients,
    workers: usize,
) -> Result<DocumentRun, PipelineError> {
    let started = Instant::now();
    config.check()?;
    check_pairing(config, input)?;
    let ensemble = run_ensemble(input, &config.ensemble, backend, workers).map_err(PipelineError::Extract)?;
    let mut warnings: Vec<String> = ensemble
        .stats
        .failed_passes
        .iter()
        .map(|f| format!("pass at {}° skipped: {}", f.angle_deg, f.error))
        .collect();

    let (doc, fallbacks) = document_from_detections(id, source_uri, input.dims(), &ensemble.detections, config);
    let mut doc = apply_corrections(&doc, &config.correction, lm.masked.as_ref());
    if let Some(w) = summarize_document(&mut doc, &config.summary, lm.generative.as_ref())? {
        warnings.push(format!("summary omitted: {w}"));
    }
    doc.stats = RunStats {
        words_detected: ensemble.stats.raw_detections,
        words_merged_away: ensemble.stats.merged_away,
        words_flagged: doc.stats.words_flagged,
        words_replaced: doc.stats.words_replaced,
        boundary_loss: ensemble.stats.boundary_loss,
        per_angle_detection_counts: ensemble.stats.per_angle.clone(),
        layout_fallbacks: fallbacks,
        wall_time_ms: 0,
    };
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(PipelineError::Validate(violations));
    }
    let mut stats = doc.stats.clone();
    stats.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(DocumentRun {
        document: doc,
        stats,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub manifest_path: PathBuf,
    pub stats: RunStats,
    pub warnings: Vec<String>,
}

/// Manifest location for `input` under `output_dir`: the input's file stem
/// plus `.manifest.json`.
pub fn manifest_path_for(output_dir: &Path, input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "document".into());
    output_dir.join(format!("{stem}{MANIFEST_EXTENSION}"))
}

/// Full run for one input file, writing `<output_dir>/<stem>.manifest.json`
/// atomically. Nothing is written when any stage fails.
pub fn run_pipeline(config: &PipelineConfig, input_path: &Path, workers: usize) -> Result<PipelineRun, PipelineError> {
    config.check()?;
    let input = load_input(input_path)?;
    check_pairing(config, &input)?;
    let backend = build_backend(config)?;
    let lm = build_lm(config)?;
    let id = input_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "document".into());
    let source_uri = input_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let run = process_page(config, &input, &id, &source_uri, backend.as_ref(), &lm, workers)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| {
        PipelineError::Write(ManifestError::Io {
            path: config.output_dir.display().to_string(),
            source: e,
        })
    })?;
    let path = manifest_path_for(&config.output_dir, input_path);
    write_manifest(&path, &run.document).map_err(|e| match e {
        ManifestError::Invalid(v) => PipelineError::Validate(v),
        other => PipelineError::Write(other),
    })?;
    Ok(PipelineRun {
        manifest_path: path,
        stats: run.stats,
        warnings: run.warnings,
    })
}

/// Runs several documents, at most `jobs` at a time. Results come back in
/// input order.
pub fn run_many(config: &PipelineConfig, inputs: &[PathBuf], jobs: usize) -> Vec<Result<PipelineRun, PipelineError>> {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => return inputs.iter().map(|_| Err(PipelineError::Config(e.to_string()))).collect(),
    };
    pool.install(|| inputs.par_iter().map(|p| run_pipeline(config, p, 1)).collect())
}

/// Converts a detection set into a laid-out document with extraction stats.
pub fn layout_detections(set: &DetectionSet, id: &str, config: &PipelineConfig) -> Result<Document, PipelineError> {
    config.layout.check().map_err(PipelineError::Config)?;
    let (mut doc, fallbacks) = document_from_detections(id, &set.source_uri, set.frame, &set.detections, config);
    doc.stats = RunStats {
        words_detected: set.stats.raw_detections.max(doc.words.len()),
        words_merged_away: set.stats.merged_away,
        boundary_loss: set.stats.boundary_loss,
        per_angle_detection_counts: set.stats.per_angle.clone(),
        layout_fallbacks: fallbacks,
        ..RunStats::default()
    };
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(PipelineError::Validate(violations));
    }
    Ok(doc)
}
