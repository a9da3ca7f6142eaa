//! Line grouping and recursive XY-cut reading order.
//!
//! All coordinates here are normalized page units. Whitespace gaps come from
//! projecting line boxes (and any blocking rectangles such as pictures or
//! advertisements) onto each axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::{Document, LineBlock, WordBlock};
use crate::geometry::{BBox, Dims};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    /// Fraction of the shorter word height two words must share vertically.
    pub line_y_overlap_min: f64,
    pub min_column_gap: f64,
    pub min_row_gap: f64,
    pub max_recursion: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            line_y_overlap_min: 0.5,
            min_column_gap: 0.03,
            min_row_gap: 0.015,
            max_recursion: 12,
        }
    }
}

impl LayoutParams {
    pub fn check(&self) -> Result<(), String> {
        let f = self.line_y_overlap_min;
        if !(f > 0.0 && f < 1.0) {
            return Err(format!("line_y_overlap_min {f} outside (0, 1)"));
        }
        for (name, v) in [
            ("min_column_gap", self.min_column_gap),
            ("min_row_gap", self.min_row_gap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("line {0} has no reading_index")]
    OrderingIncomplete(String),
    #[error("block {0} referenced but missing")]
    MissingBlock(String),
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn same_line(a: &BBox, b: &BBox, params: &LayoutParams) -> bool {
    let overlap = a.bottom.min(b.bottom) - a.top.max(b.top);
    let shorter = a.height().min(b.height());
    let gap = a.left.max(b.left) - a.right.min(b.right);
    overlap >= params.line_y_overlap_min * shorter && gap < params.min_column_gap
}

/// Groups words into lines: two words are linked when their vertical extents
/// overlap by at least `line_y_overlap_min` of the shorter height and the
/// horizontal gap between them is narrower than `min_column_gap` (so a line
/// never bridges a column gutter); lines are the connected components.
/// Words run left to right inside a line; lines are listed top to bottom and
/// named `{id_prefix}l{index}`.
pub fn group_words_into_lines(words: &[WordBlock], params: &LayoutParams, id_prefix: &str) -> Vec<LineBlock> {
    let n = words.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if same_line(&words[i].bbox, &words[j].bbox, params) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    for g in &mut groups {
        g.sort_by(|&a, &b| {
            let (x, y) = (&words[a].bbox, &words[b].bbox);
            x.left.total_cmp(&y.left).then(x.top.total_cmp(&y.top)).then(a.cmp(&b))
        });
    }
    let mut lines: Vec<LineBlock> = groups
        .into_iter()
        .map(|g| {
            let bbox = g.iter().skip(1).fold(words[g[0]].bbox, |acc, &i| acc.union(&words[i].bbox));
            LineBlock {
                id: String::new(),
                bbox,
                word_ids: g.iter().map(|&i| words[i].id.clone()).collect(),
                reading_index: None,
            }
        })
        .collect();
    lines.sort_by(|a, b| a.bbox.top.total_cmp(&b.bbox.top).then(a.bbox.left.total_cmp(&b.bbox.left)));
    for (i, l) in lines.iter_mut().enumerate() {
        l.id = format!("{id_prefix}l{i:04}");
    }
    lines
}

#[derive(Debug, Clone, PartialEq)]
pub struct XyCutOutput {
    /// Input lines permuted into reading order, `reading_index` set to 0..n.
    pub lines: Vec<LineBlock>,
    /// Regions ordered by the top-to-bottom fallback after hitting the
    /// recursion limit.
    pub fallbacks: usize,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Widest gap between merged occupied intervals along `axis`, if at least
/// `min`. Ties keep the lower coordinate.
fn widest_gap(boxes: &[BBox], axis: Axis, min: f64) -> Option<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = boxes
        .iter()
        .map(|b| match axis {
            Axis::X => (b.left, b.right),
            Axis::Y => (b.top, b.bottom),
        })
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    let mut reach = spans.first()?.1;
    for &(start, end) in &spans[1..] {
        if start > reach {
            let width = start - reach;
            if width >= min && best.is_none_or(|(s, e)| width > e - s) {
                best = Some((reach, start));
            }
        }
        reach = reach.max(end);
    }
    best
}

fn top_left(lines: &[LineBlock], a: usize, b: usize) -> std::cmp::Ordering {
    let (x, y) = (&lines[a].bbox, &lines[b].bbox);
    x.top
        .total_cmp(&y.top)
        .then(x.left.total_cmp(&y.left))
        .then_with(|| lines[a].id.cmp(&lines[b].id))
}

struct Cutter<'a> {
    lines: &'a [LineBlock],
    params: &'a LayoutParams,
    order: Vec<usize>,
    fallbacks: usize,
}

impl Cutter<'_> {
    fn region(&mut self, mut items: Vec<usize>, blockers: Vec<BBox>, depth: usize) {
        if items.len() <= 1 {
            self.order.extend(items);
            return;
        }
        if depth > self.params.max_recursion {
            self.fallbacks += 1;
            items.sort_by(|&a, &b| top_left(self.lines, a, b));
            self.order.extend(items);
            return;
        }
        let boxes: Vec<BBox> = items.iter().map(|&i| self.lines[i].bbox).chain(blockers.iter().copied()).collect();
        let vertical = widest_gap(&boxes, Axis::X, self.params.min_column_gap);
        let horizontal = widest_gap(&boxes, Axis::Y, self.params.min_row_gap);
        let cut = match (vertical, horizontal) {
            (None, None) => None,
            (Some(v), None) => Some((Axis::X, v)),
            (None, Some(h)) => Some((Axis::Y, h)),
            (Some(v), Some(h)) => {
                if h.1 - h.0 >= v.1 - v.0 {
                    Some((Axis::Y, h))
                } else {
                    Some((Axis::X, v))
                }
            }
        };
        let Some((axis, (start, end))) = cut else {
            items.sort_by(|&a, &b| top_left(self.lines, a, b));
            self.order.extend(items);
            return;
        };
        let mid = (start + end) / 2.0;
        let before = |b: &BBox| match axis {
            Axis::X => b.center().x < mid,
            Axis::Y => b.center().y < mid,
        };
        let (first, second): (Vec<usize>, Vec<usize>) = items.into_iter().partition(|&i| before(&self.lines[i].bbox));
        let (bf, bs): (Vec<BBox>, Vec<BBox>) = blockers.into_iter().partition(|b| before(b));
        self.region(first, bf, depth + 1);
        self.region(second, bs, depth + 1);
    }
}

/// Orders lines by recursive XY-cut. At each region the widest vertical gap
/// (≥ `min_column_gap`) and widest horizontal gap (≥ `min_row_gap`) are
/// compared and the wider one is cut, horizontal on ties. Left/top parts are
/// read first; regions without a qualifying gap read top to bottom.
/// `blockers` are text-free rectangles that interrupt whitespace.
///
/// `page` is the extent of the coordinate system the boxes are given in; it
/// does not affect the order.
pub fn xy_cut(lines: &[LineBlock], page: Dims, params: &LayoutParams, blockers: &[BBox]) -> XyCutOutput {
    let _ = page;
    let mut cutter = Cutter {
        lines,
        params,
        order: Vec::with_capacity(lines.len()),
        fallbacks: 0,
    };
    cutter.region((0..lines.len()).collect(), blockers.to_vec(), 0);
    let out = cutter
        .order
        .iter()
        .enumerate()
        .map(|(rank, &i)| LineBlock {
            reading_index: Some(rank),
            ..lines[i].clone()
        })
        .collect();
    XyCutOutput {
        lines: out,
        fallbacks: cutter.fallbacks,
    }
}

/// Word ids per page, in reading order.
pub fn reading_order_word_ids(doc: &Document) -> Result<Vec<Vec<String>>, LayoutError> {
    let mut pages = Vec::with_capacity(doc.pages.len());
    for page in &doc.pages {
        let mut lines = Vec::with_capacity(page.line_ids.len());
        for lid in &page.line_ids {
            let line = doc.line(lid).ok_or_else(|| LayoutError::MissingBlock(lid.clone()))?;
            let rank = line.reading_index.ok_or_else(|| LayoutError::OrderingIncomplete(lid.clone()))?;
            lines.push((rank, line));
        }
        lines.sort_by_key(|(rank, _)| *rank);
        pages.push(lines.iter().flat_map(|(_, l)| l.word_ids.iter().cloned()).collect());
    }
    Ok(pages)
}

/// Text in reading order: words joined by a space, lines by a newline, pages
/// by a blank line.
pub fn linearize_text(doc: &Document) -> Result<String, LayoutError> {
    let words = doc.word_index();
    let mut pages = Vec::with_capacity(doc.pages.len());
    for page in &doc.pages {
        let mut lines = Vec::with_capacity(page.line_ids.len());
        for lid in &page.line_ids {
            let line = doc.line(lid).ok_or_else(|| LayoutError::MissingBlock(lid.clone()))?;
            let rank = line.reading_index.ok_or_else(|| LayoutError::OrderingIncomplete(lid.clone()))?;
            let mut text = Vec::with_capacity(line.word_ids.len());
            for wid in &line.word_ids {
                let i = words.get(wid.as_str()).ok_or_else(|| LayoutError::MissingBlock(wid.clone()))?;
                text.push(doc.words[*i].text.as_str());
            }
            lines.push((rank, text.join(" ")));
        }
        lines.sort_by_key(|(rank, _)| *rank);
        pages.push(lines.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join("\n"));
    }
    Ok(pages.join("\n\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::fixtures::{two_word_document, word};
    use crate::document::PageBlock;
    use proptest::prelude::*;

    fn bb(l: f64, t: f64, r: f64, b: f64) -> BBox {
        BBox::new(l, t, r, b).unwrap()
    }

    fn line(id: &str, b: BBox) -> LineBlock {
        LineBlock {
            id: id.into(),
            bbox: b,
            word_ids: vec![format!("{id}-w")],
            reading_index: None,
        }
    }

    fn ids(out: &XyCutOutput) -> Vec<&str> {
        out.lines.iter().map(|l| l.id.as_str()).collect()
    }

    #[test]
    fn one_line_ordered_by_left_edge() {
        let words = vec![word("b", "world", bb(0.21, 0.1, 0.3, 0.12), 1.0), word("a", "hello", bb(0.1, 0.1, 0.2, 0.12), 1.0)];
        let lines = group_words_into_lines(&words, &LayoutParams::default(), "p1-");
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].word_ids, vec!["a", "b"]);
        assert_eq!(lines[0].bbox, bb(0.1, 0.1, 0.3, 0.12));
        assert_eq!(lines[0].id, "p1-l0000");
    }

    #[test]
    fn disjoint_bands_make_two_lines() {
        let words = vec![word("a", "x", bb(0.1, 0.1, 0.2, 0.12), 1.0), word("b", "y", bb(0.1, 0.2, 0.2, 0.22), 1.0)];
        assert_eq!(group_words_into_lines(&words, &LayoutParams::default(), "").len(), 2);
    }

    #[test]
    fn chained_overlap_is_transitive() {
        // A–B overlap 0.6 of height, B–C overlap 0.6, A–C only 0.2
        let a = word("a", "a", bb(0.10, 0.10, 0.15, 0.20), 1.0);
        let b = word("b", "b", bb(0.16, 0.14, 0.21, 0.24), 1.0);
        let c = word("c", "c", bb(0.22, 0.18, 0.27, 0.28), 1.0);
        let frac = |x: &BBox, y: &BBox| (x.bottom.min(y.bottom) - x.top.max(y.top)) / x.height().min(y.height());
        assert!(frac(&a.bbox, &b.bbox) >= 0.5 && frac(&b.bbox, &c.bbox) >= 0.5 && frac(&a.bbox, &c.bbox) < 0.5);
        let lines = group_words_into_lines(&[c, a, b], &LayoutParams::default(), "");
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].word_ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn far_words_split_across_columns() {
        let words = vec![word("a", "x", bb(0.1, 0.1, 0.4, 0.12), 1.0), word("b", "y", bb(0.5, 0.1, 0.9, 0.12), 1.0)];
        assert_eq!(group_words_into_lines(&words, &LayoutParams::default(), "").len(), 2);
    }

    #[test]
    fn single_column_top_to_bottom() {
        let lines: Vec<_> = [4, 0, 3, 1, 2]
            .iter()
            .map(|&i| line(&format!("r{i}"), bb(0.1, 0.1 + 0.05 * i as f64, 0.9, 0.13 + 0.05 * i as f64)))
            .collect();
        let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &LayoutParams::default(), &[]);
        assert_eq!(ids(&out), vec!["r0", "r1", "r2", "r3", "r4"]);
        assert_eq!(out.lines.iter().map(|l| l.reading_index.unwrap()).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(out.fallbacks, 0);
    }

    #[test]
    fn two_columns_read_column_major() {
        let mut lines = Vec::new();
        for r in 0..3 {
            let t = 0.1 + 0.05 * r as f64;
            lines.push(line(&format!("R{r}"), bb(0.55, t, 1.0, t + 0.03)));
            lines.push(line(&format!("L{r}"), bb(0.0, t, 0.45, t + 0.03)));
        }
        let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &LayoutParams::default(), &[]);
        // column gap 0.10 beats the 0.02 row gaps
        assert_eq!(ids(&out), vec!["L0", "L1", "L2", "R0", "R1", "R2"]);
    }

    #[test]
    fn headline_spanning_columns_read_first() {
        let mut lines = vec![line("head", bb(0.0, 0.0, 1.0, 0.05))];
        for r in 0..2 {
            let t = 0.15 + 0.05 * r as f64;
            lines.push(line(&format!("L{r}"), bb(0.0, t, 0.45, t + 0.03)));
            lines.push(line(&format!("R{r}"), bb(0.55, t, 1.0, t + 0.03)));
        }
        let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &LayoutParams::default(), &[]);
        // the 0.10 gap under the headline ties the column gap: horizontal wins
        assert_eq!(ids(&out), vec!["head", "L0", "L1", "R0", "R1"]);
    }

    #[test]
    fn picture_blocks_one_column_gap() {
        // Columns A [0, .28], B [.36, .64], C [.72, 1]; rows at .10/.15 and .55/.60.
        // A picture spanning B and C at y .25–.45 blocks the B|C gap.
        let mut lines = Vec::new();
        for (c, (l, r)) in [("A", (0.0, 0.28)), ("B", (0.36, 0.64)), ("C", (0.72, 1.0))] {
            for (k, t) in [0.10, 0.15, 0.55, 0.60].iter().enumerate() {
                lines.push(line(&format!("{c}{k}"), bb(l, *t, r, t + 0.03)));
            }
        }
        let picture = bb(0.40, 0.25, 0.95, 0.45);
        let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &LayoutParams::default(), &[picture]);
        // Page: horizontal .45–.55 (0.10) beats the open A|B gap (0.08).
        // Top half: vertical .28–.36 (0.08) beats horizontal .18–.25 (0.07).
        // B, C and the picture: no vertical gap, so cut at .18–.25, then the
        // B0 B1 C0 C1 band splits at .64–.72. Bottom half: A|B then B|C.
        assert_eq!(
            ids(&out),
            vec!["A0", "A1", "B0", "B1", "C0", "C1", "A2", "A3", "B2", "B3", "C2", "C3"]
        );
    }

    #[test]
    fn recursion_limit_falls_back() {
        let lines: Vec<_> = (0..6).map(|i| line(&format!("r{i}"), bb(0.1, 0.1 * i as f64, 0.9, 0.1 * i as f64 + 0.05))).collect();
        let params = LayoutParams {
            max_recursion: 1,
            ..LayoutParams::default()
        };
        let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &params, &[]);
        assert_eq!(ids(&out), vec!["r0", "r1", "r2", "r3", "r4", "r5"]);
        assert!(out.fallbacks > 0);
    }

    fn grid_lines() -> impl Strategy<Value = Vec<LineBlock>> {
        // coordinates on a 1/1024 lattice keep shifted gaps exactly equal
        proptest::collection::vec((0u32..600, 0u32..600, 8u32..300, 4u32..40), 0..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (x, y, w, h))| {
                    let f = |n: u32| n as f64 / 1024.0;
                    line(&format!("x{i}"), bb(f(x), f(y), f(x + w), f(y + h)))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn xy_cut_permutes_and_indexes(lines in grid_lines()) {
            let out = xy_cut(&lines, Dims::new(1.0, 1.0).unwrap(), &LayoutParams::default(), &[]);
            let mut got: Vec<&str> = ids(&out);
            got.sort();
            let mut want: Vec<&str> = lines.iter().map(|l| l.id.as_str()).collect();
            want.sort();
            prop_assert_eq!(got, want);
            let idx: Vec<usize> = out.lines.iter().map(|l| l.reading_index.unwrap()).collect();
            prop_assert_eq!(idx, (0..lines.len()).collect::<Vec<_>>());
        }

        #[test]
        fn xy_cut_translation_invariant(lines in grid_lines(), dx in 0u32..64, dy in 0u32..64) {
            let (dx, dy) = (dx as f64 / 1024.0, dy as f64 / 1024.0);
            let shifted: Vec<LineBlock> = lines.iter().map(|l| LineBlock { bbox: l.bbox.translate(dx, dy), ..l.clone() }).collect();
            let p = Dims::new(1.0, 1.0).unwrap();
            let a = xy_cut(&lines, p, &LayoutParams::default(), &[]);
            let b = xy_cut(&shifted, p, &LayoutParams::default(), &[]);
            prop_assert_eq!(ids(&a), ids(&b));
        }
    }

    fn with_pages(pages: Vec<Vec<(&str, &str)>>) -> Document {
        let mut doc = two_word_document();
        doc.words.clear();
        doc.lines.clear();
        doc.pages.clear();
        for (p, page_words) in pages.into_iter().enumerate() {
            let mut page = PageBlock {
                id: format!("p{}", p + 1),
                page_number: p + 1,
                dims: Dims::new(1.0, 1.0).unwrap(),
                line_ids: vec![],
            };
            for (i, (id, text)) in page_words.into_iter().enumerate() {
                let b = bb(0.1, 0.1 * i as f64, 0.2, 0.1 * i as f64 + 0.05);
                doc.words.push(word(id, text, b, 1.0));
                let lid = format!("{id}-line");
                doc.lines.push(LineBlock {
                    id: lid.clone(),
                    bbox: b,
                    word_ids: vec![id.to_string()],
                    reading_index: Some(i),
                });
                page.line_ids.push(lid);
            }
            doc.pages.push(page);
        }
        doc
    }

    #[test]
    fn linearize_rules() {
        let mut doc = two_word_document();
        assert_eq!(linearize_text(&doc).unwrap(), "old dominion");
        let two = with_pages(vec![vec![("a", "a")], vec![("b", "b")]]);
        assert_eq!(linearize_text(&two).unwrap(), "a\n\nb");
        doc.lines[0].reading_index = None;
        assert_eq!(linearize_text(&doc), Err(LayoutError::OrderingIncomplete("l0".into())));
    }

    #[test]
    fn linearize_follows_reading_index() {
        let mut doc = with_pages(vec![vec![("a", "first"), ("b", "second")]]);
        doc.lines[0].reading_index = Some(1);
        doc.lines[1].reading_index = Some(0);
        assert_eq!(linearize_text(&doc).unwrap(), "second\nfirst");
        assert_eq!(reading_order_word_ids(&doc).unwrap(), vec![vec!["b".to_string(), "a".to_string()]]);
    }
}
