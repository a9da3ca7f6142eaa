//! Sentence-boundary chunking and map-reduce summarization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{GenerativeLm, LmError};

pub const DEFAULT_INSTRUCTION: &str =
    "Simplify the archaic language of this historical text and summarize its content for a modern reader.";

/// Reduce passes allowed before giving up.
pub const MAX_REDUCE_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryConfig {
    pub max_chunk_chars: usize,
    pub max_summary_chars: usize,
    pub instruction: String,
    /// More chunk summaries than this trigger a reduce pass.
    pub reduce_threshold_chunks: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 12_000,
            max_summary_chars: 1_500,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            reduce_threshold_chunks: 2,
        }
    }
}

impl SummaryConfig {
    pub fn check(&self) -> Result<(), SummarizationError> {
        if !(self.max_chunk_chars > self.max_summary_chars && self.max_summary_chars > 0) {
            return Err(SummarizationError::InvalidConfig(format!(
                "need max_chunk_chars ({}) > max_summary_chars ({}) > 0",
                self.max_chunk_chars, self.max_summary_chars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SummarizationError {
    #[error("invalid summary config: {0}")]
    InvalidConfig(String),
    #[error("nothing to summarize")]
    EmptyInput,
    #[error("summarization failed: {reason}")]
    Failed {
        reason: String,
        /// Summaries produced before the failure, for inspection.
        partial: Vec<String>,
        #[source]
        source: Option<LmError>,
    },
}

/// Splits after every `.`, `?` or `!` that is followed by whitespace; the
/// whitespace run stays with the sentence it ends.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if !matches!(c, '.' | '?' | '!') || !chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            continue;
        }
        let mut end = text.len();
        while let Some(&(j, n)) = chars.peek() {
            if !n.is_whitespace() {
                end = j;
                break;
            }
            chars.next();
        }
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Splits `s` into pieces of at most `max` characters.
fn hard_split(s: &str, max: usize) -> impl Iterator<Item = &str> {
    let mut rest = s;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let cut = rest.char_indices().nth(max).map_or(rest.len(), |(i, _)| i);
        let (head, tail) = rest.split_at(cut);
        rest = tail;
        Some(head)
    })
}

/// Greedy sentence packing: each chunk holds as many whole sentences as fit
/// in `max_chunk_chars` characters; longer sentences are hard-split.
/// Concatenating the chunks gives back `text` exactly.
pub fn chunk_text(text: &str, max_chunk_chars: usize) -> Vec<String> {
    let max = max_chunk_chars.max(1);
    let mut chunks = Vec::new();
    let mut cur = String::new();
    let mut cur_len = 0;
    for sentence in sentences(text) {
        for piece in hard_split(sentence, max) {
            let len = piece.chars().count();
            if cur_len + len > max && !cur.is_empty() {
                chunks.push(std::mem::take(&mut cur));
                cur_len = 0;
            }
            cur.push_str(piece);
            cur_len += len;
        }
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

fn call(lm: &dyn GenerativeLm, config: &SummaryConfig, text: &str, partial: &[String]) -> Result<String, SummarizationError> {
    let out = lm
        .summarize(&config.instruction, text, config.max_summary_chars)
        .map_err(|e| SummarizationError::Failed {
            reason: e.to_string(),
            partial: partial.to_vec(),
            source: Some(e),
        })?;
    // clamp: a remote model may overrun the requested length
    Ok(out.chars().take(config.max_summary_chars).collect())
}

/// Map-reduce summary: each chunk is summarized; while more than
/// `reduce_threshold_chunks` summaries remain, or their joined text is over
/// `max_summary_chars`, the space-joined summaries are re-chunked and
/// summarized again.
pub fn summarize(text: &str, config: &SummaryConfig, lm: &dyn GenerativeLm) -> Result<String, SummarizationError> {
    config.check()?;
    if text.trim().is_empty() {
        return Err(SummarizationError::EmptyInput);
    }
    let mut chunks = chunk_text(text, config.max_chunk_chars);
    for _ in 0..=MAX_REDUCE_DEPTH {
        let mut summaries: Vec<String> = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            let s = call(lm, config, chunk, &summaries)?;
            summaries.push(s);
        }
        let joined = summaries.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
        if joined.is_empty() {
            return Err(SummarizationError::Failed {
                reason: "model returned empty summaries".into(),
                partial: summaries,
                source: None,
            });
        }
        if summaries.len() <= config.reduce_threshold_chunks && joined.chars().count() <= config.max_summary_chars {
            return Ok(joined);
        }
        if summaries.len() == 1 {
            // a single over-long summary cannot occur after clamping
            return Ok(joined.chars().take(config.max_summary_chars).collect());
        }
        chunks = chunk_text(&joined, config.max_chunk_chars);
        if chunks.len() == 1 {
            return call(lm, config, &chunks[0], &summaries);
        }
    }
    Err(SummarizationError::Failed {
        reason: format!("no single summary after {MAX_REDUCE_DEPTH} reduce passes"),
        partial: chunks,
        source: None,
    })
}
