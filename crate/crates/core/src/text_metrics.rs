//! Recognition-oriented evaluation: edit distance, CER / WER, page-level CER
//! in reading order, and line-level CER with IoU matching.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::object_metrics::threshold_key;
use crate::{Error, ObjectMask, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over Unicode scalar values.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

/// Edit distance over whitespace-separated tokens.
pub fn word_distance(a: &str, b: &str) -> usize {
    let a: Vec<&str> = a.split_whitespace().collect();
    let b: Vec<&str> = b.split_whitespace().collect();
    edit_distance(&a, &b)
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

pub fn word_len(s: &str) -> usize {
    s.split_whitespace().count()
}

fn rate(errors: usize, reference: usize) -> f64 {
    errors as f64 / reference.max(1) as f64
}

/// Character error rate; may exceed 1.
pub fn cer(hyp: &str, reference: &str) -> f64 {
    rate(char_distance(hyp, reference), char_len(reference))
}

/// Word error rate; may exceed 1.
pub fn wer(hyp: &str, reference: &str) -> f64 {
    rate(word_distance(hyp, reference), word_len(reference))
}

/// A recognized or annotated text line.
#[derive(Debug, Clone, PartialEq)]
pub struct TextLine {
    pub mask: ObjectMask,
    pub text: String,
}

impl TextLine {
    pub fn new(mask: ObjectMask, text: impl Into<String>) -> Self {
        TextLine {
            mask,
            text: text.into(),
        }
    }
}

/// Line indices sorted top-to-bottom then left-to-right by bounding-box
/// centroid; empty lines go last in input order.
pub fn reading_order(lines: &[TextLine]) -> Vec<usize> {
    let key = |i: usize| lines[i].mask.bbox().map(|b| {
        let (cx, cy) = b.centroid();
        (cy, cx)
    });
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| match (key(a), key(b)) {
        (Some(ka), Some(kb)) => ka
            .0
            .total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(a.cmp(&b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    order
}

/// Line texts in reading order joined by single spaces.
pub fn page_hypothesis(lines: &[TextLine]) -> String {
    reading_order(lines)
        .into_iter()
        .map(|i| lines[i].text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Summable error counts of page-level evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageTextCounts {
    pub char_errors: usize,
    pub ref_chars: usize,
    pub word_errors: usize,
    pub ref_words: usize,
}

impl PageTextCounts {
    pub fn accumulate(&mut self, other: &PageTextCounts) {
        self.char_errors += other.char_errors;
        self.ref_chars += other.ref_chars;
        self.word_errors += other.word_errors;
        self.ref_words += other.ref_words;
    }

    pub fn cer(&self) -> f64 {
        rate(self.char_errors, self.ref_chars)
    }

    pub fn wer(&self) -> f64 {
        rate(self.word_errors, self.ref_words)
    }
}

/// Counts for the page hypothesis against the reference page text.
pub fn page_counts(lines: &[TextLine], gt_text: &str) -> PageTextCounts {
    let hyp = page_hypothesis(lines);
    PageTextCounts {
        char_errors: char_distance(&hyp, gt_text),
        ref_chars: char_len(gt_text),
        word_errors: word_distance(&hyp, gt_text),
        ref_words: word_len(gt_text),
    }
}

/// CER of the reading-order concatenation of `lines` against `gt_text`.
pub fn cer_page(lines: &[TextLine], gt_text: &str) -> f64 {
    page_counts(lines, gt_text).cer()
}

/// Summable counts of line-level evaluation at one threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineCounts {
    pub char_errors: usize,
    pub word_errors: usize,
    /// Characters of all reference lines.
    pub ref_chars: usize,
    pub ref_words: usize,
    /// Reference characters in pairs at or above the threshold.
    pub matched_chars: usize,
}

impl LineCounts {
    pub fn accumulate(&mut self, other: &LineCounts) {
        self.char_errors += other.char_errors;
        self.word_errors += other.word_errors;
        self.ref_chars += other.ref_chars;
        self.ref_words += other.ref_words;
        self.matched_chars += other.matched_chars;
    }

    pub fn cer(&self) -> f64 {
        rate(self.char_errors, self.ref_chars)
    }

    pub fn wer(&self) -> f64 {
        rate(self.word_errors, self.ref_words)
    }

    /// 1 when there are no reference characters at all.
    pub fn matched_char_fraction(&self) -> f64 {
        if self.ref_chars == 0 {
            1.0
        } else {
            self.matched_chars as f64 / self.ref_chars as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// One-to-one pairing by decreasing IoU; ties go to the lower reference
/// index, then the lower prediction index. Pairs need a positive IoU.
pub fn pair_lines(preds: &[TextLine], gts: &[TextLine]) -> Result<Vec<LinePair>> {
    let mut candidates = Vec::new();
    for (p, pl) in preds.iter().enumerate() {
        for (g, gl) in gts.iter().enumerate() {
            let iou = pl.mask.overlap(&gl.mask)?.iou;
            if iou > 0.0 && !(pl.mask.is_empty() && gl.mask.is_empty()) {
                candidates.push(LinePair { pred: p, gt: g, iou });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.gt.cmp(&b.gt))
            .then(a.pred.cmp(&b.pred))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !gt_used[c.gt] {
            pred_used[c.pred] = true;
            gt_used[c.gt] = true;
            pairs.push(c);
        }
    }
    Ok(pairs)
}

/// Line-level evaluation of one page at several IoU thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct LineEval {
    pub thresholds: Vec<f64>,
    pub counts: Vec<LineCounts>,
    pub pairs: Vec<LinePair>,
}

/// Line-level CER.
///
/// At threshold `t` a pair with IoU >= `t` costs its edit distance. A pair
/// below `t` costs the longer of its two texts, an unmatched reference line
/// its length, and an unmatched prediction its length.
pub fn cer_line(preds: &[TextLine], gts: &[TextLine], thresholds: &[f64]) -> Result<LineEval> {
    if thresholds.is_empty() {
        return Err(Error::Config("empty threshold list".into()));
    }
    let pairs = pair_lines(preds, gts)?;
    let mut pred_paired = vec![false; preds.len()];
    let mut gt_paired = vec![false; gts.len()];
    // (iou, char distance, char penalty, word distance, word penalty, gt chars)
    let costs: Vec<(f64, usize, usize, usize, usize, usize)> = pairs
        .iter()
        .map(|p| {
            pred_paired[p.pred] = true;
            gt_paired[p.gt] = true;
            let (pt, gt) = (&preds[p.pred].text, &gts[p.gt].text);
            (
                p.iou,
                char_distance(pt, gt),
                char_len(gt).max(char_len(pt)),
                word_distance(pt, gt),
                word_len(gt).max(word_len(pt)),
                char_len(gt),
            )
        })
        .collect();
    let mut fixed = LineCounts {
        ref_chars: gts.iter().map(|l| char_len(&l.text)).sum(),
        ref_words: gts.iter().map(|l| word_len(&l.text)).sum(),
        ..Default::default()
    };
    let unpaired_gts = gts.iter().zip(&gt_paired).filter(|(_, &paired)| !paired);
    let unpaired_preds = preds.iter().zip(&pred_paired).filter(|(_, &paired)| !paired);
    for (l, _) in unpaired_gts.chain(unpaired_preds) {
        fixed.char_errors += char_len(&l.text);
        fixed.word_errors += word_len(&l.text);
    }
    let counts = thresholds
        .iter()
        .map(|&t| {
            let mut c = fixed;
            for &(iou, cd, cp, wd, wp, gl) in &costs {
                if iou >= t {
                    c.char_errors += cd;
                    c.word_errors += wd;
                    c.matched_chars += gl;
                } else {
                    c.char_errors += cp;
                    c.word_errors += wp;
                }
            }
            c
        })
        .collect();
    Ok(LineEval {
        thresholds: thresholds.to_vec(),
        counts,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub cer: f64,
    pub wer: f64,
    pub matched_char_fraction: f64,
    #[serde(flatten)]
    pub counts: LineCounts,
}

/// Report form of line-level results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEvalResult {
    pub per_threshold: BTreeMap<String, ThresholdRow>,
    /// Mean of CER@t over the thresholds.
    pub cer_range: f64,
    pub wer_range: f64,
    pub matched_char_fraction_range: f64,
}

impl TextEvalResult {
    pub fn from_counts(thresholds: &[f64], counts: &[LineCounts]) -> Self {
        let n = counts.len().max(1) as f64;
        TextEvalResult {
            per_threshold: thresholds
                .iter()
                .zip(counts)
                .map(|(&t, c)| {
                    (
                        threshold_key(t),
                        ThresholdRow {
                            cer: c.cer(),
                            wer: c.wer(),
                            matched_char_fraction: c.matched_char_fraction(),
                            counts: *c,
                        },
                    )
                })
                .collect(),
            cer_range: counts.iter().map(LineCounts::cer).sum::<f64>() / n,
            wer_range: counts.iter().map(LineCounts::wer).sum::<f64>() / n,
            matched_char_fraction_range: counts
                .iter()
                .map(LineCounts::matched_char_fraction)
                .sum::<f64>()
                / n,
        }
    }
}

impl LineEval {
    pub fn result(&self) -> TextEvalResult {
        TextEvalResult::from_counts(&self.thresholds, &self.counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_metrics::default_thresholds;
    use proptest::prelude::*;

    fn line(x0: u32, y0: u32, w: u32, h: u32, text: &str) -> TextLine {
        TextLine::new(
            ObjectMask::from_pixels(
                100,
                100,
                (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y))),
            ),
            text,
        )
    }

    fn dp_oracle(a: &[char], b: &[char]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let s = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = s.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn distance_examples() {
        assert_eq!(char_distance("abc", "abc"), 0);
        assert_eq!(char_distance("abc", ""), 3);
        assert_eq!(char_distance("kitten", "sitting"), 3);
        assert_eq!(char_distance("été", "ete"), 2);
        assert_eq!(word_distance("a b c", "a x c d"), 2);
    }

    #[test]
    fn rates() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert_eq!(cer("abce", "abcd"), 0.25);
        assert_eq!(cer("xy", ""), 2.0);
        assert_eq!(cer("", ""), 0.0);
        assert_eq!(wer("the cat", "the dog"), 0.5);
    }

    #[test]
    fn page_examples() {
        assert_eq!(cer_page(&[line(0, 0, 50, 10, "hello")], "hello"), 0.0);
        assert_eq!(cer_page(&[], "hello"), 1.0);
        let stacked = [line(0, 30, 50, 10, "cd"), line(0, 0, 50, 10, "ab")];
        assert_eq!(page_hypothesis(&stacked), "ab cd");
        assert_eq!(cer_page(&stacked, "ab cd"), 0.0);
        let swapped = [line(0, 0, 50, 10, "cd"), line(0, 30, 50, 10, "ab")];
        let expected = dp_oracle(&"cd ab".chars().collect::<Vec<_>>(), &"ab cd".chars().collect::<Vec<_>>());
        assert_eq!(cer_page(&swapped, "ab cd"), expected as f64 / 5.0);
    }

    #[test]
    fn same_row_reads_left_to_right() {
        let lines = [line(60, 0, 20, 10, "right"), line(0, 0, 20, 10, "left")];
        assert_eq!(page_hypothesis(&lines), "left right");
    }

    #[test]
    fn line_perfect_and_empty() {
        let t = default_thresholds();
        let gts = [line(0, 0, 50, 10, "first"), line(0, 20, 50, 10, "second")];
        let r = cer_line(&gts, &gts, &t).unwrap().result();
        assert_eq!(r.cer_range, 0.0);
        assert!(r.per_threshold.values().all(|row| row.matched_char_fraction == 1.0));
        let r = cer_line(&[], &gts, &t).unwrap().result();
        assert!(r.per_threshold.values().all(|row| row.cer == 1.0 && row.matched_char_fraction == 0.0));
    }

    #[test]
    fn line_worked_example() {
        // Reference 10x10 block; prediction covers 7 of its columns -> IoU 0.7.
        let gt = line(0, 0, 10, 10, "abcdefghij");
        let pred = line(0, 0, 7, 10, "abcdefghXY");
        let spurious = line(50, 50, 5, 5, "wxyz");
        let e = cer_line(&[pred, spurious], &[gt], &[0.5, 0.75]).unwrap();
        assert_eq!(e.pairs[0].iou, 0.7);
        assert_eq!(e.counts[0].cer(), 0.6);
        assert_eq!(e.counts[1].cer(), 1.4);
        assert_eq!(e.counts[0].matched_char_fraction(), 1.0);
        assert_eq!(e.counts[1].matched_char_fraction(), 0.0);
    }

    #[test]
    fn pairing_is_one_to_one_by_iou() {
        let gts = [line(0, 0, 10, 10, "a")];
        let preds = [line(0, 0, 5, 10, "b"), line(0, 0, 9, 10, "c")];
        let pairs = pair_lines(&preds, &gts).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].pred, 1);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', ' ', 'é']), 0..12)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn distance_matches_oracle_and_is_metric(a in arb_text(), b in arb_text(), c in arb_text()) {
            let (va, vb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            let dab = char_distance(&a, &b);
            prop_assert_eq!(dab, dp_oracle(&va, &vb));
            prop_assert_eq!(dab, char_distance(&b, &a));
            prop_assert_eq!(dab == 0, a == b);
            prop_assert!(char_distance(&a, &c) <= dab + char_distance(&b, &c));
        }

        #[test]
        fn single_line_page_is_plain_cer(text in arb_text(), gt in arb_text()) {
            prop_assert_eq!(cer_page(&[line(3, 3, 10, 5, &text)], &gt), cer(&text, &gt));
        }

        #[test]
        fn line_cer_monotone_in_threshold(
            boxes in prop::collection::vec((0u32..60, 0u32..60, 1u32..30, 1u32..20, arb_text()), 0..5),
            gboxes in prop::collection::vec((0u32..60, 0u32..60, 1u32..30, 1u32..20, arb_text()), 0..5),
        ) {
            let mk = |v: &Vec<(u32, u32, u32, u32, String)>| -> Vec<TextLine> {
                v.iter().map(|(x, y, w, h, t)| line(*x, *y, *w, *h, t)).collect()
            };
            let e = cer_line(&mk(&boxes), &mk(&gboxes), &default_thresholds()).unwrap();
            for w in e.counts.windows(2) {
                prop_assert!(w[0].cer() <= w[1].cer());
                prop_assert!(w[0].matched_char_fraction() >= w[1].matched_char_fraction());
            }
        }
    }
}
