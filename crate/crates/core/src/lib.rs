//! Archival OCR pipeline: multi-angle and tiled extraction with box merging,
//! reading-order layout, language-model correction, summarization, and a
//! versioned JSON manifest.

pub mod backend;
pub mod correction;
pub mod document;
pub mod ensemble;
pub mod eval;
pub mod geometry;
pub mod http;
pub mod layout;
pub mod lm;
pub mod manifest;
pub mod pipeline;
pub mod retry;
pub mod summarization;

pub use backend::{
    mock_extract, synth_scene, BackendError, ConfusionTable, ExtractionBackend, MockBackend, PageInput, PageSource, RasterPage,
    RemoteBackend, RemoteConfig, SceneSpec, SceneWord, SynthParams,
};
pub use correction::{apply_corrections, Candidate, CorrectionAction, CorrectionConfig, CorrectionRecord};
pub use document::{validate_document, Document, LineBlock, PageBlock, Provenance, Violation, WordBlock};
pub use ensemble::{merge_detections, run_ensemble, run_rotation_ensemble, run_tiling_ensemble, Detection, EnsembleConfig, TileConfig};
pub use eval::{evaluate_detections, evaluate_manifest, EvalReport};
pub use geometry::{BBox, Dims, Point};
pub use layout::{group_words_into_lines, linearize_text, xy_cut, LayoutParams};
pub use lm::{GenerativeLm, MaskedLm, MockMaskedLm, MockSummarizer};
pub use manifest::{parse_manifest, read_manifest, serialize_manifest, write_manifest, ManifestError};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, RunStats};
pub use summarization::{chunk_text, summarize, SummaryConfig};
