//! Low-confidence word correction with a masked language model.
//!
//! Each flagged word is masked in its reading-order context, the LM proposes
//! candidates, and the best candidate by a blend of LM probability and
//! character similarity to the OCR token may replace it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::Document;
use crate::layout::reading_order_word_ids;
use crate::lm::{LmError, MaskedLm, MASK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub confidence_threshold: f64,
    pub k: usize,
    pub lm_weight_lambda: f64,
    pub accept_floor_kappa: f64,
    /// Words of context kept on each side of the mask.
    pub context_window_words: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.90,
            k: 3,
            lm_weight_lambda: 0.7,
            accept_floor_kappa: 0.5,
            context_window_words: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid correction config: {0}")]
pub struct CorrectionConfigError(pub String);

impl CorrectionConfig {
    pub fn check(&self) -> Result<(), CorrectionConfigError> {
        for (name, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("lm_weight_lambda", self.lm_weight_lambda),
            ("accept_floor_kappa", self.accept_floor_kappa),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorrectionConfigError(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.k == 0 {
            return Err(CorrectionConfigError("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub lm_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionAction {
    Replaced,
    Kept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub word_id: String,
    pub original: String,
    pub original_confidence: f64,
    pub candidates: Vec<Candidate>,
    pub chosen: String,
    pub combined_score: f64,
    pub action: CorrectionAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// 1 − Levenshtein / longer length, over characters. Two empty strings are
/// identical.
pub fn char_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Word ids in reading order. Words not reachable through ordered lines
/// follow in document order.
fn ordered_word_ids(doc: &Document) -> Vec<String> {
    let mut ids: Vec<String> = reading_order_word_ids(doc)
        .map(|pages| pages.into_iter().flatten().collect())
        .unwrap_or_default();
    let seen: std::collections::HashSet<String> = ids.iter().cloned().collect();
    ids.extend(doc.words.iter().filter(|w| !seen.contains(&w.id)).map(|w| w.id.clone()));
    ids
}

/// Ids of the words whose confidence is below `threshold`, in reading order.
pub fn flag_low_confidence(doc: &Document, threshold: f64) -> Vec<String> {
    let index = doc.word_index();
    ordered_word_ids(doc)
        .into_iter()
        .filter(|id| index.get(id.as_str()).is_some_and(|&i| doc.words[i].confidence < threshold))
        .collect()
}

/// `texts` joined by spaces with position `target` replaced by the mask and
/// at most `window` words kept on each side.
pub fn masked_context(texts: &[&str], target: usize, window: usize) -> String {
    let lo = target.saturating_sub(window);
    let hi = (target + 1 + window).min(texts.len());
    (lo..hi)
        .map(|i| if i == target { MASK } else { texts[i] })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Asks the LM for at most `k` candidates, sorted by probability descending.
pub fn propose_candidates(masked: &str, k: usize, lm: &dyn MaskedLm) -> Result<Vec<Candidate>, LmError> {
    if masked.matches(MASK).count() != 1 {
        return Err(LmError::InvalidRequest(format!("expected exactly one {MASK} in {masked:?}")));
    }
    let mut out = lm.fill_mask(masked, k)?;
    if let Some(bad) = out
        .iter()
        .find(|c| c.token.is_empty() || !(0.0..=1.0).contains(&c.lm_probability))
    {
        return Err(LmError::InvalidResponse(format!("bad candidate {bad:?}")));
    }
    out.sort_by(|a, b| b.lm_probability.total_cmp(&a.lm_probability));
    out.truncate(k);
    Ok(out)
}

/// Scores every candidate as `λ·p + (1−λ)·char_similarity` and replaces the
/// original with the best one when it clears `κ` and differs from the
/// original. Ties prefer higher probability, then the lexicographically
/// smaller token.
pub fn select_replacement(
    word_id: &str,
    original: &str,
    original_confidence: f64,
    candidates: &[Candidate],
    config: &CorrectionConfig,
) -> CorrectionRecord {
    let lambda = config.lm_weight_lambda;
    let best = candidates
        .iter()
        .map(|c| (lambda * c.lm_probability + (1.0 - lambda) * char_similarity(original, &c.token), c))
        .reduce(|best, next| {
            let order = next
                .0
                .total_cmp(&best.0)
                .then(next.1.lm_probability.total_cmp(&best.1.lm_probability))
                .then(best.1.token.cmp(&next.1.token));
            if order.is_gt() {
                next
            } else {
                best
            }
        });
    let (action, chosen, score, reason) = match best {
        None => (CorrectionAction::Kept, original.to_string(), 0.0, Some("no candidates".to_string())),
        Some((score, c)) if c.token == original => (CorrectionAction::Kept, original.to_string(), score, None),
        Some((score, _)) if score < config.accept_floor_kappa => (
            CorrectionAction::Kept,
            original.to_string(),
            score,
            Some(format!("best score {score:.4} below floor {}", config.accept_floor_kappa)),
        ),
        Some((score, c)) => (CorrectionAction::Replaced, c.token.clone(), score, None),
    };
    CorrectionRecord {
        word_id: word_id.to_string(),
        original: original.to_string(),
        original_confidence,
        candidates: candidates.to_vec(),
        chosen,
        combined_score: score,
        action,
        reason,
    }
}

/// Corrects every flagged word in reading order; each query sees the
/// corrections made before it. LM failures keep the word and record why.
///
/// The returned document carries one record per flagged word, and its
/// `words_flagged`/`words_replaced` stats are updated. Replaced words take
/// the combined score as their confidence and remember the first OCR token
/// in `corrected_from`.
pub fn apply_corrections(doc: &Document, config: &CorrectionConfig, lm: &dyn MaskedLm) -> Document {
    let mut out = doc.clone();
    let index = doc.word_index();
    let order: Vec<usize> = ordered_word_ids(doc).iter().map(|id| index[id.as_str()]).collect();
    let mut texts: Vec<String> = order.iter().map(|&i| doc.words[i].text.clone()).collect();

    let mut records = Vec::new();
    for pos in 0..order.len() {
        let word = &doc.words[order[pos]];
        if word.confidence >= config.confidence_threshold {
            continue;
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let masked = masked_context(&refs, pos, config.context_window_words);
        let record = match propose_candidates(&masked, config.k, lm) {
            Ok(candidates) => select_replacement(&word.id, &word.text, word.confidence, &candidates, config),
            Err(e) => CorrectionRecord {
                word_id: word.id.clone(),
                original: word.text.clone(),
                original_confidence: word.confidence,
                candidates: Vec::new(),
                chosen: word.text.clone(),
                combined_score: 0.0,
                action: CorrectionAction::Kept,
                reason: Some(e.to_string()),
            },
        };
        if record.action == CorrectionAction::Replaced {
            let target = &mut out.words[order[pos]];
            target.corrected_from = Some(target.corrected_from.take().unwrap_or_else(|| target.text.clone()));
            target.text = record.chosen.clone();
            target.confidence = record.combined_score.clamp(0.0, 1.0);
            texts[pos] = record.chosen.clone();
        }
        records.push(record);
    }
    out.stats.words_flagged = records.len();
    out.stats.words_replaced = records.iter().filter(|r| r.action == CorrectionAction::Replaced).count();
    out.corrections = records;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::fixtures::{two_word_document, word};
    use crate::document::LineBlock;
    use crate::geometry::BBox;
    use crate::lm::MockMaskedLm;
    use proptest::prelude::*;

    fn cand(t: &str, p: f64) -> Candidate {
        Candidate {
            token: t.into(),
            lm_probability: p,
        }
    }

    fn hand_candidates() -> Vec<Candidate> {
        vec![cand("hand", 0.80), cand("hands", 0.10), cand("arm", 0.05)]
    }

    /// Textbook O(nm) edit distance, independent of the library.
    fn levenshtein_oracle(a: &str, b: &str) -> usize {
        let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for i in 1..=a.len() {
            let mut cur = vec![i; b.len() + 1];
            for j in 1..=b.len() {
                let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
                cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn fund_becomes_hand() {
        let r = select_replacement("w", "fund", 0.6679, &hand_candidates(), &CorrectionConfig::default());
        // char_sim(fund, hand) = 1 − 2/4; 0.7·0.8 + 0.3·0.5
        assert_eq!(levenshtein_oracle("fund", "hand"), 2);
        assert!((r.combined_score - 0.71).abs() < 1e-12);
        assert_eq!(r.action, CorrectionAction::Replaced);
        assert_eq!(r.chosen, "hand");
        assert_eq!(r.original_confidence, 0.6679);
    }

    #[test]
    fn original_on_top_is_kept() {
        let r = select_replacement("w", "hand", 0.5, &hand_candidates(), &CorrectionConfig::default());
        assert_eq!(r.action, CorrectionAction::Kept);
        assert_eq!(r.chosen, "hand");
    }

    #[test]
    fn weak_candidates_are_kept() {
        let cands = vec![cand("zebra", 0.2), cand("quilt", 0.1)];
        let r = select_replacement("w", "fund", 0.5, &cands, &CorrectionConfig::default());
        let oracle = |t: &str, p: f64| 0.7 * p + 0.3 * (1.0 - levenshtein_oracle("fund", t) as f64 / 5.0);
        assert!(oracle("zebra", 0.2) < 0.5 && oracle("quilt", 0.1) < 0.5);
        assert_eq!(r.action, CorrectionAction::Kept);
        assert!(r.reason.is_some());
    }

    #[test]
    fn no_candidates_kept() {
        let r = select_replacement("w", "fund", 0.5, &[], &CorrectionConfig::default());
        assert_eq!((r.action, r.chosen.as_str()), (CorrectionAction::Kept, "fund"));
    }

    #[test]
    fn ties_prefer_probability_then_token() {
        let config = CorrectionConfig {
            lm_weight_lambda: 1.0,
            ..CorrectionConfig::default()
        };
        let r = select_replacement("w", "x", 0.1, &[cand("b", 0.6), cand("a", 0.6)], &config);
        assert_eq!(r.chosen, "a");
        let config = CorrectionConfig {
            lm_weight_lambda: 0.5,
            ..CorrectionConfig::default()
        };
        // "fun" p=0.8 sim(fund,fun)=.75 → .775; "fond" p=0.8 sim .75 → .775; tie on p too
        let r = select_replacement("w", "fund", 0.1, &[cand("fun", 0.8), cand("fond", 0.8)], &config);
        assert_eq!(r.chosen, "fond");
    }

    #[test]
    fn candidates_truncated_and_checked() {
        let mut lm = MockMaskedLm::new();
        lm.insert("your [MASK]", hand_candidates());
        assert_eq!(propose_candidates("your [MASK]", 1, &lm).unwrap(), vec![cand("hand", 0.8)]);
        assert!(propose_candidates("no mask", 3, &lm).is_err());
        assert!(propose_candidates("[MASK] [MASK]", 3, &lm).is_err());
    }

    #[test]
    fn context_window() {
        let t = ["a", "b", "c", "d", "e"];
        assert_eq!(masked_context(&t, 2, 1), "b [MASK] d");
        assert_eq!(masked_context(&t, 0, 25), "[MASK] b c d e");
    }

    #[test]
    fn flagging_thresholds() {
        let mut doc = two_word_document();
        doc.words[1].confidence = 0.6679;
        assert_eq!(flag_low_confidence(&doc, 0.90), vec!["w1"]);
        assert!(flag_low_confidence(&doc, 0.0).is_empty());
        doc.words[1].confidence = 1.0;
        assert!(flag_low_confidence(&doc, 0.99).is_empty());
    }

    /// Words "I shake your fund warmly" on one line; `low` picks the
    /// low-confidence ones.
    fn letter(texts: &[&str], low: &[usize]) -> Document {
        let mut doc = two_word_document();
        doc.words = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let x = 0.05 + 0.1 * i as f64;
                let conf = if low.contains(&i) { 0.6679 } else { 0.99 };
                word(&format!("w{i}"), t, BBox::new(x, 0.1, x + 0.08, 0.12).unwrap(), conf)
            })
            .collect();
        doc.lines = vec![LineBlock {
            id: "l0".into(),
            bbox: BBox::new(0.05, 0.1, 0.05 + 0.1 * (texts.len() - 1) as f64 + 0.08, 0.12).unwrap(),
            word_ids: (0..texts.len()).map(|i| format!("w{i}")).collect(),
            reading_index: Some(0),
        }];
        doc.stats.words_detected = texts.len();
        doc
    }

    #[test]
    fn corrects_document() {
        let doc = letter(&["I", "shake", "your", "fund", "warmly"], &[3]);
        let mut lm = MockMaskedLm::new();
        lm.insert("I shake your [MASK] warmly", hand_candidates());
        let out = apply_corrections(&doc, &CorrectionConfig::default(), &lm);
        assert_eq!(out.words[3].text, "hand");
        assert_eq!(out.words[3].corrected_from.as_deref(), Some("fund"));
        assert!((out.words[3].confidence - 0.71).abs() < 1e-12);
        assert_eq!(out.corrections.len(), 1);
        assert_eq!(out.corrections[0].original_confidence, 0.6679);
        for i in [0, 1, 2, 4] {
            assert_eq!(out.words[i], doc.words[i]);
        }
        assert_eq!(doc.words[3].text, "fund");
        assert!(crate::document::validate_document(&out).is_empty());
    }

    #[test]
    fn nothing_flagged_is_identity() {
        let doc = letter(&["all", "good"], &[]);
        let out = apply_corrections(&doc, &CorrectionConfig::default(), &MockMaskedLm::new());
        assert_eq!(out, doc);
    }

    #[test]
    fn partial_table_coverage() {
        let doc = letter(&["fund", "dear", "wise", "tail"], &[0, 1, 2]);
        let mut lm = MockMaskedLm::new();
        lm.insert("[MASK] dear", vec![cand("hand", 0.8)]);
        lm.insert("hand [MASK]", vec![cand("clear", 0.8)]);
        let config = CorrectionConfig {
            context_window_words: 1,
            ..CorrectionConfig::default()
        };
        let out = apply_corrections(&doc, &config, &lm);
        let actions: Vec<_> = out.corrections.iter().map(|r| r.action).collect();
        assert_eq!(actions, vec![CorrectionAction::Replaced, CorrectionAction::Replaced, CorrectionAction::Kept]);
        assert_eq!(out.corrections[2].reason.as_deref(), Some("no candidates"));
        assert_eq!((out.stats.words_flagged, out.stats.words_replaced), (3, 2));
    }

    struct Down;
    impl MaskedLm for Down {
        fn fill_mask(&self, _: &str, _: usize) -> Result<Vec<Candidate>, LmError> {
            Err(LmError::Unavailable("offline".into()))
        }
    }

    #[test]
    fn lm_failure_keeps_word_with_reason() {
        let doc = letter(&["I", "fund"], &[1]);
        let out = apply_corrections(&doc, &CorrectionConfig::default(), &Down);
        assert_eq!(out.words, doc.words);
        assert_eq!(out.corrections[0].action, CorrectionAction::Kept);
        assert!(out.corrections[0].reason.as_deref().unwrap().contains("offline"));
    }

    #[test]
    fn second_pass_changes_no_words() {
        let doc = letter(&["I", "shake", "your", "fund", "warmly"], &[3]);
        let mut lm = MockMaskedLm::new();
        lm.insert("I shake your [MASK] warmly", hand_candidates());
        let once = apply_corrections(&doc, &CorrectionConfig::default(), &lm);
        let twice = apply_corrections(&once, &CorrectionConfig::default(), &lm);
        assert_eq!(twice.words, once.words);
    }

    proptest! {
        #[test]
        fn similarity_matches_oracle(a in "[a-e]{0,7}", b in "[a-e]{0,7}") {
            let longest = a.len().max(b.len());
            let expected = if longest == 0 { 1.0 } else { 1.0 - levenshtein_oracle(&a, &b) as f64 / longest as f64 };
            prop_assert!((char_similarity(&a, &b) - expected).abs() < 1e-12);
        }

        #[test]
        fn confident_words_untouched(confs in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
            let texts: Vec<String> = (0..confs.len()).map(|i| format!("t{i}")).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut doc = letter(&refs, &[]);
            for (w, c) in doc.words.iter_mut().zip(&confs) {
                w.confidence = *c;
            }
            let mut lm = MockMaskedLm::new();
            lm.insert("[MASK]", vec![cand("zz", 1.0)]);
            let config = CorrectionConfig { lm_weight_lambda: 1.0, ..CorrectionConfig::default() };
            let out = apply_corrections(&doc, &config, &lm);
            let flagged = confs.iter().filter(|&&c| c < 0.9).count();
            prop_assert_eq!(out.corrections.len(), flagged);
            for (before, after) in doc.words.iter().zip(&out.words) {
                if before.confidence >= 0.9 {
                    prop_assert_eq!(before, after);
                }
            }
        }
    }
}
