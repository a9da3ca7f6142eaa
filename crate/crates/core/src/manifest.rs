//! Versioned JSON manifest: the persisted record of one pipeline run.
//!
//! Layout (keys in this order):
//!
//! ```text
//! { "schema_version": "1",
//!   "document": { "id", "source_uri" },
//!   "pages": [...], "lines": [...], "words": [...],
//!   "corrections": [...], "summary": string | null,
//!   "config_snapshot": {...}, "stats": {...} }
//! ```
//!
//! Boxes are normalized to the original page. Output is pretty-printed with a
//! trailing newline; equal documents serialize to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::CorrectionRecord;
use crate::document::{validate_document, Document, LineBlock, PageBlock, Violation, WordBlock};
use crate::pipeline::{PipelineConfig, RunStats};

pub const SCHEMA_VERSION: &str = "1";
pub const MANIFEST_EXTENSION: &str = ".manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("document fails validation: {}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invalid(Vec<Violation>),
    #[error("malformed manifest at {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("unsupported schema_version {0:?} (expected {SCHEMA_VERSION:?})")]
    UnsupportedVersion(String),
    #[error("integrity violation at {}: {}", .0.path, .0.rule)]
    Integrity(Violation),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    id: String,
    source_uri: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    schema_version: String,
    document: Header,
    pages: Vec<PageBlock>,
    lines: Vec<LineBlock>,
    words: Vec<WordBlock>,
    corrections: Vec<CorrectionRecord>,
    summary: Option<String>,
    config_snapshot: PipelineConfig,
    stats: RunStats,
}

pub fn serialize_manifest(doc: &Document) -> Result<Vec<u8>, ManifestError> {
    let violations = validate_document(doc);
    if !violations.is_empty() {
        return Err(ManifestError::Invalid(violations));
    }
    let file = ManifestFile {
        schema_version: SCHEMA_VERSION.to_string(),
        document: Header {
            id: doc.id.clone(),
            source_uri: doc.source_uri.clone(),
        },
        pages: doc.pages.clone(),
        lines: doc.lines.clone(),
        words: doc.words.clone(),
        corrections: doc.corrections.clone(),
        summary: doc.summary.clone(),
        config_snapshot: doc.config_snapshot.clone(),
        stats: doc.stats.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file).map_err(|e| ManifestError::Malformed {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Document, ManifestError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| ManifestError::Malformed {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    match value.get("schema_version") {
        Some(serde_json::Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(ManifestError::UnsupportedVersion(v.clone())),
        Some(other) => return Err(ManifestError::UnsupportedVersion(other.to_string())),
        None => {
            return Err(ManifestError::Malformed {
                path: "schema_version".into(),
                message: "missing field".into(),
            })
        }
    }
    let file: ManifestFile = serde_path_to_error::deserialize(value).map_err(|e| ManifestError::Malformed {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let doc = Document {
        id: file.document.id,
        source_uri: file.document.source_uri,
        pages: file.pages,
        lines: file.lines,
        words: file.words,
        summary: file.summary,
        corrections: file.corrections,
        config_snapshot: file.config_snapshot,
        stats: file.stats,
    };
    if let Some(first) = validate_document(&doc).into_iter().next() {
        return Err(ManifestError::Integrity(first));
    }
    Ok(doc)
}

pub fn read_manifest(path: &Path) -> Result<Document, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&bytes)
}

/// Writes `bytes` next to `path` under a temporary name, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ManifestError> {
    let io = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".manifest-")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_manifest(path: &Path, doc: &Document) -> Result<(), ManifestError> {
    let bytes = serialize_manifest(doc)?;
    write_atomic(path, &bytes)
}
