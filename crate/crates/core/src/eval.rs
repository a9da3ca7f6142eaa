//! Detection quality against synthetic ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::SceneSpec;
use crate::document::Document;
use crate::ensemble::{canonical_order, Detection};
use crate::geometry::{iou, Dims};
use crate::layout::reading_order_word_ids;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Share of matched pairs whose text agrees exactly.
    pub text_accuracy: f64,
    /// Kendall's tau between reading positions and truth order over matched
    /// words; absent without a truth order or with fewer than two matches.
    pub reading_order_kendall_tau: Option<f64>,
    pub matched: usize,
    pub detections: usize,
    pub truth: usize,
}

/// `num / den`, taking an empty denominator as vacuously perfect.
fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy one-to-one matching by descending IoU; pairs below `threshold`
/// never match. Returns `(detection index, truth index)` pairs. Detections
/// must already be in canonical order so ties resolve independently of
/// input order.
fn greedy_match(dets: &[Detection], truth: &SceneSpec, threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, t) in truth.words.iter().enumerate() {
            let v = iou(&d.bbox, &t.bbox);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut truth_used = vec![false; truth.words.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !det_used[i] && !truth_used[j] {
            det_used[i] = true;
            truth_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Kendall's tau-a over `(a, b)` rank pairs.
pub fn kendall_tau(pairs: &[(usize, usize)]) -> Option<f64> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    let mut score: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = pairs[i].0.cmp(&pairs[j].0) as i64;
            let b = pairs[i].1.cmp(&pairs[j].1) as i64;
            score += a * b;
        }
    }
    Some(score as f64 / (n * (n - 1) / 2) as f64)
}

fn same_frame(a: Dims, b: Dims) -> bool {
    (a.width - b.width).abs() <= 1e-9 * b.width.max(1.0) && (a.height - b.height).abs() <= 1e-9 * b.height.max(1.0)
}

fn report(dets: &[Detection], truth: &SceneSpec, threshold: f64, positions: Option<&[usize]>) -> Result<EvalReport, EvalError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EvalError::InvalidArgument(format!("IoU threshold {threshold} outside (0, 1]")));
    }
    let matches = greedy_match(dets, truth, threshold);
    let precision = rate(matches.len(), dets.len());
    let recall = rate(matches.len(), truth.words.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let exact = matches.iter().filter(|&&(i, j)| dets[i].text == truth.words[j].true_text).count();
    let tau = match positions {
        Some(pos) if truth.words_in_reading_order => {
            kendall_tau(&matches.iter().map(|&(i, j)| (pos[i], j)).collect::<Vec<_>>())
        }
        _ => None,
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        text_accuracy: rate(exact, matches.len()),
        reading_order_kendall_tau: tau,
        matched: matches.len(),
        detections: dets.len(),
        truth: truth.words.len(),
    })
}

/// Scores page-frame detections. `frame` is the extent they were reported
/// in and must equal the scene's.
pub fn evaluate_detections(dets: &[Detection], frame: Dims, truth: &SceneSpec, threshold: f64) -> Result<EvalReport, EvalError> {
    if !same_frame(frame, truth.dims) {
        return Err(EvalError::InvalidArgument(format!(
            "detections are in a {}x{} frame, truth in {}x{}",
            frame.width, frame.height, truth.dims.width, truth.dims.height
        )));
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by(canonical_order);
    report(&sorted, truth, threshold, None)
}

/// Scores a single-page manifest, including reading order when the truth
/// lists its words in reading order.
pub fn evaluate_manifest(doc: &Document, truth: &SceneSpec, threshold: f64) -> Result<EvalReport, EvalError> {
    let [page] = doc.pages.as_slice() else {
        return Err(EvalError::InvalidArgument(format!("expected one page, found {}", doc.pages.len())));
    };
    if !same_frame(page.dims, truth.dims) {
        return Err(EvalError::InvalidArgument("manifest page and truth differ in size".into()));
    }
    let order: Vec<String> = reading_order_word_ids(doc)
        .map(|p| p.into_iter().flatten().collect())
        .unwrap_or_default();
    let mut dets: Vec<(Detection, usize)> = doc
        .words
        .iter()
        .map(|w| {
            let det = Detection {
                text: w.text.clone(),
                bbox: w.bbox.scale(page.dims.width, page.dims.height),
                confidence: w.confidence,
                provenance: w.provenance.clone(),
            };
            let pos = order.iter().position(|id| *id == w.id).unwrap_or(usize::MAX);
            (det, pos)
        })
        .collect();
    dets.sort_by(|a, b| canonical_order(&a.0, &b.0));
    let positions: Vec<usize> = dets.iter().map(|d| d.1).collect();
    let dets: Vec<Detection> = dets.into_iter().map(|d| d.0).collect();
    let has_order = positions.iter().all(|&p| p != usize::MAX);
    report(&dets, truth, threshold, has_order.then_some(positions.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SceneWord;
    use crate::document::Provenance;
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn truth() -> SceneSpec {
        SceneSpec {
            dims: Dims::new(100.0, 100.0).unwrap(),
            words: vec![
                SceneWord::aligned("dear", BBox::new(10.0, 10.0, 30.0, 20.0).unwrap()),
                SceneWord::aligned("sarah", BBox::new(40.0, 10.0, 60.0, 20.0).unwrap()),
            ],
            seed: 0,
            words_in_reading_order: true,
        }
    }

    fn det(text: &str, b: BBox) -> Detection {
        Detection {
            text: text.into(),
            bbox: b,
            confidence: 1.0,
            provenance: Provenance {
                scan_angle_deg: 0.0,
                tile_row: 0,
                tile_col: 0,
                backend_id: "mock".into(),
            },
        }
    }

    fn exact() -> Vec<Detection> {
        truth().words.iter().map(|w| det(&w.true_text, w.bbox)).collect()
    }

    #[test]
    fn perfect_detections() {
        let t = truth();
        let r = evaluate_detections(&exact(), t.dims, &t, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.text_accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn half_recall() {
        let t = truth();
        let r = evaluate_detections(&exact()[..1], t.dims, &t, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_text_lowers_text_accuracy_only() {
        let t = truth();
        let mut d = exact();
        d[1].text = "sarab".into();
        let r = evaluate_detections(&d, t.dims, &t, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.text_accuracy), (1.0, 1.0, 0.5));
    }

    #[test]
    fn frame_mismatch_rejected() {
        let t = truth();
        assert!(evaluate_detections(&exact(), Dims::new(50.0, 100.0).unwrap(), &t, 0.5).is_err());
    }

    #[test]
    fn tau_extremes() {
        assert_eq!(kendall_tau(&[(0, 0), (1, 1), (2, 2)]), Some(1.0));
        assert_eq!(kendall_tau(&[(2, 0), (1, 1), (0, 2)]), Some(-1.0));
        assert_eq!(kendall_tau(&[(0, 0)]), None);
    }

    #[test]
    fn manifest_tau() {
        use crate::pipeline::{document_from_detections, PipelineConfig};
        let t = truth();
        let (doc, _) = document_from_detections("d", "t.json", t.dims, &exact(), &PipelineConfig::default());
        let r = evaluate_manifest(&doc, &t, 0.5).unwrap();
        assert_eq!(r.reading_order_kendall_tau, Some(1.0));
        assert_eq!(r.recall, 1.0);
    }

    proptest! {
        #[test]
        fn order_never_changes_report(
            boxes in proptest::collection::vec((0.0f64..80.0, 0.0f64..80.0, 5.0f64..20.0, 5.0f64..20.0, 0.5f64..1.0), 0..8),
            seed in 0u64..1000,
        ) {
            let t = truth();
            let dets: Vec<Detection> = boxes
                .iter()
                .map(|&(x, y, w, h, c)| Detection { confidence: c, ..det("dear", BBox::new(x, y, x + w, y + h).unwrap()) })
                .chain(exact())
                .collect();
            let mut shuffled = dets.clone();
            let n = shuffled.len();
            for i in 0..n {
                shuffled.swap(i, (seed as usize * 31 + i * 7) % n);
            }
            let a = evaluate_detections(&dets, t.dims, &t, 0.5).unwrap();
            let b = evaluate_detections(&shuffled, t.dims, &t, 0.5).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!((0.0..=1.0).contains(&b.precision) && (0.0..=1.0).contains(&b.recall));
        }
    }
}
