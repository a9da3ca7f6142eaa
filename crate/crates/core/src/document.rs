//! Page → line → word block hierarchy and its structural checks.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::correction::{CorrectionAction, CorrectionRecord};
use crate::geometry::{compute_tile_grid, BBox, Dims};
use crate::pipeline::{PipelineConfig, RunStats};

/// Slack allowed when checking that a line box contains its words.
pub const LINE_CONTAINMENT_TOLERANCE: f64 = 0.005;

const COORD_EPS: f64 = 1e-9;

/// Which scan produced a detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scan_angle_deg: f64,
    pub tile_row: usize,
    pub tile_col: usize,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBlock {
    pub id: String,
    pub text: String,
    /// Normalized to the original page, `[0, 1]²`.
    pub bbox: BBox,
    pub confidence: f64,
    pub provenance: Provenance,
    /// OCR token this word had before correction replaced it.
    pub corrected_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineBlock {
    pub id: String,
    pub bbox: BBox,
    pub word_ids: Vec<String>,
    pub reading_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageBlock {
    pub id: String,
    pub page_number: usize,
    /// Source extent in pixels (or scene units).
    pub dims: Dims,
    pub line_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub source_uri: String,
    pub pages: Vec<PageBlock>,
    pub lines: Vec<LineBlock>,
    pub words: Vec<WordBlock>,
    pub summary: Option<String>,
    pub corrections: Vec<CorrectionRecord>,
    pub config_snapshot: PipelineConfig,
    pub stats: RunStats,
}

impl Document {
    pub fn word(&self, id: &str) -> Option<&WordBlock> {
        self.words.iter().find(|w| w.id == id)
    }

    pub fn line(&self, id: &str) -> Option<&LineBlock> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub(crate) fn word_index(&self) -> HashMap<&str, usize> {
        self.words.iter().enumerate().map(|(i, w)| (w.id.as_str(), i)).collect()
    }
}

/// One broken invariant, located by a JSON-style path into the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub block_id: String,
    pub rule: String,
}

impl Violation {
    fn new(path: impl Into<String>, block_id: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            block_id: block_id.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.path, self.block_id, self.rule)
    }
}

fn in_unit_square(b: &BBox) -> bool {
    b.left >= -COORD_EPS && b.top >= -COORD_EPS && b.right <= 1.0 + COORD_EPS && b.bottom <= 1.0 + COORD_EPS
}

/// Checks every structural invariant of `doc`. An empty result means the
/// document is well formed.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut claim = |id: &str, path: String, out: &mut Vec<Violation>| {
        if id.is_empty() {
            out.push(Violation::new(path, id, "empty id"));
        } else if !seen_ids.insert(id.to_string()) {
            out.push(Violation::new(path, id, "duplicate id"));
        }
    };
    if doc.id.is_empty() {
        out.push(Violation::new("document.id", "", "empty id"));
    }

    let mut words: HashMap<&str, &WordBlock> = HashMap::new();
    for (i, w) in doc.words.iter().enumerate() {
        let at = |field: &str| format!("words[{i}].{field}");
        claim(&w.id, at("id"), &mut out);
        words.insert(w.id.as_str(), w);
        if w.text.is_empty() {
            out.push(Violation::new(at("text"), &w.id, "empty text"));
        }
        if !(w.confidence.is_finite() && (0.0..=1.0).contains(&w.confidence)) {
            out.push(Violation::new(at("confidence"), &w.id, "confidence out of range"));
        }
        if !w.bbox.is_valid() {
            out.push(Violation::new(at("bbox"), &w.id, "invalid bbox"));
        } else if !in_unit_square(&w.bbox) {
            out.push(Violation::new(at("bbox"), &w.id, "bbox outside normalized page"));
        }
        if w.corrected_from.as_deref() == Some(w.text.as_str()) {
            out.push(Violation::new(at("corrected_from"), &w.id, "corrected_from equals text"));
        }
        let a = w.provenance.scan_angle_deg;
        if !(a.is_finite() && (0.0..360.0).contains(&a)) {
            out.push(Violation::new(at("provenance.scan_angle_deg"), &w.id, "scan angle outside [0, 360)"));
        }
    }

    let mut word_owner: HashMap<&str, usize> = HashMap::new();
    let mut lines: HashMap<&str, &LineBlock> = HashMap::new();
    for (i, l) in doc.lines.iter().enumerate() {
        let at = |field: &str| format!("lines[{i}].{field}");
        claim(&l.id, at("id"), &mut out);
        lines.insert(l.id.as_str(), l);
        if l.word_ids.is_empty() {
            out.push(Violation::new(at("word_ids"), &l.id, "line has no words"));
        }
        let bbox_ok = l.bbox.is_valid();
        if !bbox_ok {
            out.push(Violation::new(at("bbox"), &l.id, "invalid bbox"));
        }
        for (j, wid) in l.word_ids.iter().enumerate() {
            let path = format!("lines[{i}].word_ids[{j}]");
            match words.get(wid.as_str()) {
                None => out.push(Violation::new(path, &l.id, format!("missing word {wid}"))),
                Some(w) => {
                    if word_owner.insert(wid.as_str(), i).is_some() {
                        out.push(Violation::new(path.clone(), &l.id, format!("word {wid} referenced more than once")));
                    }
                    if bbox_ok && w.bbox.is_valid() && !l.bbox.contains_box(&w.bbox, LINE_CONTAINMENT_TOLERANCE) {
                        out.push(Violation::new(path, &l.id, format!("line bbox does not contain word {wid}")));
                    }
                }
            }
        }
    }
    for (i, w) in doc.words.iter().enumerate() {
        if !word_owner.contains_key(w.id.as_str()) {
            out.push(Violation::new(format!("words[{i}]"), &w.id, "orphan word (in no line)"));
        }
    }

    let mut line_owner: HashMap<&str, usize> = HashMap::new();
    for (i, p) in doc.pages.iter().enumerate() {
        let at = |field: &str| format!("pages[{i}].{field}");
        claim(&p.id, at("id"), &mut out);
        if p.page_number != i + 1 {
            out.push(Violation::new(at("page_number"), &p.id, format!("page numbers not contiguous (expected {})", i + 1)));
        }
        if p.dims.check().is_err() {
            out.push(Violation::new(at("dims"), &p.id, "invalid dims"));
        }
        let mut reading: HashSet<usize> = HashSet::new();
        let grid = tile_grid_shape(&doc.config_snapshot, p.dims);
        for (j, lid) in p.line_ids.iter().enumerate() {
            let path = format!("pages[{i}].line_ids[{j}]");
            let Some(line) = lines.get(lid.as_str()) else {
                out.push(Violation::new(path, &p.id, format!("missing line {lid}")));
                continue;
            };
            if line_owner.insert(lid.as_str(), i).is_some() {
                out.push(Violation::new(path.clone(), &p.id, format!("line {lid} referenced more than once")));
            }
            if let Some(r) = line.reading_index {
                if !reading.insert(r) {
                    out.push(Violation::new(path.clone(), lid, format!("reading_index {r} repeated on page")));
                }
            }
            for wid in &line.word_ids {
                if let Some(w) = words.get(wid.as_str()) {
                    let (rows, cols) = grid;
                    if w.provenance.tile_row >= rows || w.provenance.tile_col >= cols {
                        out.push(Violation::new(
                            format!("words[{}].provenance", doc.words.iter().position(|x| x.id == *wid).unwrap_or(0)),
                            wid,
                            format!("tile ({}, {}) outside {rows}x{cols} grid", w.provenance.tile_row, w.provenance.tile_col),
                        ));
                    }
                }
            }
        }
    }
    for (i, l) in doc.lines.iter().enumerate() {
        if !line_owner.contains_key(l.id.as_str()) {
            out.push(Violation::new(format!("lines[{i}]"), &l.id, "orphan line (on no page)"));
        }
    }

    for (i, c) in doc.corrections.iter().enumerate() {
        let at = |field: &str| format!("corrections[{i}].{field}");
        if !words.contains_key(c.word_id.as_str()) {
            out.push(Violation::new(at("word_id"), &c.word_id, format!("missing word {}", c.word_id)));
        }
        match c.action {
            CorrectionAction::Replaced => {
                if !c.candidates.iter().any(|k| k.token == c.chosen) {
                    out.push(Violation::new(at("chosen"), &c.word_id, "replacement not among candidates"));
                }
            }
            CorrectionAction::Kept => {
                if c.chosen != c.original {
                    out.push(Violation::new(at("chosen"), &c.word_id, "kept record must choose the original"));
                }
            }
        }
    }

    let s = &doc.stats;
    if !(s.words_replaced <= s.words_flagged && s.words_flagged <= s.words_detected) {
        out.push(Violation::new("stats", &doc.id, "stats must satisfy replaced <= flagged <= detected"));
    }
    out
}

fn tile_grid_shape(config: &PipelineConfig, dims: Dims) -> (usize, usize) {
    let Some(tile) = &config.ensemble.tile else {
        return (1, 1);
    };
    match compute_tile_grid(dims, tile.tile_dims, tile.overlap) {
        Ok(grid) => grid
            .iter()
            .fold((0, 0), |(r, c), t| (r.max(t.row + 1), c.max(t.col + 1))),
        Err(_) => (1, 1),
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn well_formed_document_has_no_violations() {
        assert_eq!(validate_document(&two_word_document()), vec![]);
    }

    #[test]
    fn confidence_out_of_range() {
        let mut doc = two_word_document();
        doc.words[1].confidence = 1.2;
        let v = validate_document(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].block_id, "w1");
        assert!(v[0].rule.contains("confidence out of range"));
    }

    #[test]
    fn line_must_contain_words() {
        let mut doc = two_word_document();
        // word reaches 0.01 past the line's right edge, beyond the 0.005 slack
        doc.words[1].bbox.right = doc.lines[0].bbox.right + 0.01;
        let v = validate_document(&doc);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].block_id, "l0");
        assert!(v[0].rule.contains("does not contain"));

        // inside the slack is fine
        let mut doc = two_word_document();
        doc.words[1].bbox.right = doc.lines[0].bbox.right + 0.004;
        assert!(validate_document(&doc).is_empty());
    }

    #[test]
    fn referential_integrity() {
        let mut doc = two_word_document();
        doc.words.remove(0);
        let v = validate_document(&doc);
        assert!(v.iter().any(|v| v.path == "lines[0].word_ids[0]" && v.rule.contains("missing word w0")));

        let mut doc = two_word_document();
        doc.lines[0].word_ids.pop();
        let v = validate_document(&doc);
        assert!(v.iter().any(|v| v.block_id == "w1" && v.rule.contains("orphan")));

        let mut doc = two_word_document();
        doc.words[1].id = "w0".into();
        assert!(validate_document(&doc).iter().any(|v| v.rule == "duplicate id"));
    }

    #[test]
    fn page_and_word_rules() {
        let mut doc = two_word_document();
        doc.pages[0].page_number = 2;
        doc.words[0].corrected_from = Some("old".into());
        doc.words[1].text.clear();
        doc.words[1].provenance.scan_angle_deg = 360.0;
        let rules: Vec<_> = validate_document(&doc).into_iter().map(|v| v.rule).collect();
        assert!(rules.iter().any(|r| r.contains("not contiguous")));
        assert!(rules.iter().any(|r| r.contains("corrected_from equals text")));
        assert!(rules.iter().any(|r| r.contains("empty text")));
        assert!(rules.iter().any(|r| r.contains("scan angle")));
    }

    #[test]
    fn tile_indices_checked_against_grid() {
        let mut doc = two_word_document();
        doc.words[0].provenance.tile_col = 1;
        assert!(validate_document(&doc).iter().any(|v| v.rule.contains("outside 1x1 grid")));
    }

    #[test]
    fn repeated_reading_index() {
        let mut doc = two_word_document();
        let w = word("w2", "x", BBox::new(0.1, 0.3, 0.2, 0.35).unwrap(), 1.0);
        doc.lines.push(LineBlock {
            id: "l1".into(),
            bbox: w.bbox,
            word_ids: vec!["w2".into()],
            reading_index: Some(0),
        });
        doc.words.push(w);
        doc.pages[0].line_ids.push("l1".into());
        doc.stats.words_detected = 3;
        let v = validate_document(&doc);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("reading_index 0 repeated"));
    }
}
