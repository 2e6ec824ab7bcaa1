//! Object matching and all-points interpolated average precision.
//!
//! Predictions are ranked by confidence (missing confidence counts as 1),
//! then by larger pixel count, then by input index. Each prediction in turn
//! claims the still-unmatched ground-truth object of highest IoU (lowest index
//! on ties) when that IoU reaches the threshold; otherwise it is a false
//! positive and claims nothing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, ObjectMask, Result};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Rounds to six decimals so that `0.5 + k * 0.05` lands on the double nearest
/// to the intended decimal.
fn snap(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// Parses `start:stop:step`, a comma list, or a single value.
pub fn parse_thresholds(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Config(format!("thresholds {text:?}: {m}"));
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("{s:?} is not a number")))
    };
    let out: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| snap(start + k as f64 * step)).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if out.is_empty() || out.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(bad("values must lie in [0, 1]"));
    }
    Ok(out)
}

/// Report key for a threshold: its percentage, e.g. `0.55` becomes `"55"`.
pub fn threshold_key(t: f64) -> String {
    let pct = t * 100.0;
    let r = pct.round();
    if (pct - r).abs() < 1e-9 {
        format!("{}", r as i64)
    } else {
        format!("{pct}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    /// Position of the prediction in the input list.
    pub index: usize,
    pub confidence: f64,
    pub pixel_count: u64,
    /// Matched ground-truth index.
    pub gt: Option<usize>,
    /// IoU with the matched object, or with the best unmatched one for a false positive.
    pub iou: f64,
    pub is_tp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatches {
    pub threshold: f64,
    /// Ranked best first.
    pub predictions: Vec<RankedPrediction>,
    pub total_gt: usize,
}

impl RankedMatches {
    pub fn true_positives(&self) -> usize {
        self.predictions.iter().filter(|p| p.is_tp).count()
    }

    pub fn false_positives(&self) -> usize {
        self.predictions.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.total_gt - self.true_positives()
    }

    pub fn pr_curve(&self) -> PrCurve {
        PrCurve::from_ranked(self.predictions.iter().map(|p| p.is_tp), self.total_gt)
    }

    pub fn average_precision(&self) -> f64 {
        average_precision(self.predictions.iter().map(|p| p.is_tp), self.total_gt)
    }
}

/// Cumulative precision / recall after each ranked prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Maximum precision at this or any later rank.
    pub interpolated: Vec<f64>,
}

impl PrCurve {
    pub fn from_ranked(is_tp: impl IntoIterator<Item = bool>, total_gt: usize) -> Self {
        let mut recall = Vec::new();
        let mut precision = Vec::new();
        let mut tp = 0usize;
        for (i, hit) in is_tp.into_iter().enumerate() {
            tp += hit as usize;
            precision.push(tp as f64 / (i + 1) as f64);
            recall.push(if total_gt == 0 {
                0.0
            } else {
                tp as f64 / total_gt as f64
            });
        }
        let mut interpolated = precision.clone();
        for i in (0..interpolated.len().saturating_sub(1)).rev() {
            interpolated[i] = interpolated[i].max(interpolated[i + 1]);
        }
        PrCurve {
            recall,
            precision,
            interpolated,
        }
    }
}

/// Area under the interpolated precision-recall step curve.
///
/// No ground truth scores 1 without predictions and 0 with any. The area is
/// accumulated as an exact fraction and rounded once, falling back to float
/// summation if the fraction outgrows 128 bits.
pub fn average_precision(is_tp: impl IntoIterator<Item = bool>, total_gt: usize) -> f64 {
    let flags: Vec<bool> = is_tp.into_iter().collect();
    if total_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    // Cumulative precision at rank i is tp_i / (i + 1); keep it as a fraction.
    let mut tp = 0u128;
    let precision: Vec<(u128, u128)> = flags
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += hit as u128;
            (tp, i as u128 + 1)
        })
        .collect();
    let mut interpolated = precision.clone();
    for i in (0..interpolated.len().saturating_sub(1)).rev() {
        let (a, b) = (interpolated[i], interpolated[i + 1]);
        if b.0 * a.1 > a.0 * b.1 {
            interpolated[i] = b;
        }
    }
    // Recall only moves at true positives, each time by 1 / total_gt.
    let mut sum = ExactSum::default();
    let mut run: Option<((u128, u128), u128)> = None;
    for (_, &p) in flags.iter().zip(&interpolated).filter(|(hit, _)| **hit) {
        run = match run {
            Some((q, count)) if q == p => Some((q, count + 1)),
            Some((q, count)) => {
                sum.add(count * q.0, q.1);
                Some((p, 1))
            }
            None => Some((p, 1)),
        };
    }
    if let Some((q, count)) = run {
        sum.add(count * q.0, q.1);
    }
    sum.divided_by(total_gt as u128)
}

/// Sum of non-negative fractions, exact while it fits in `u128`.
#[derive(Debug)]
struct ExactSum {
    exact: Option<(u128, u128)>,
    approx: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum {
            exact: Some((0, 1)),
            approx: 0.0,
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl ExactSum {
    fn add(&mut self, num: u128, den: u128) {
        self.approx += num as f64 / den as f64;
        self.exact = self.exact.and_then(|(n, d)| {
            let g = gcd(d, den);
            let lhs = n.checked_mul(den / g)?;
            let rhs = num.checked_mul(d / g)?;
            let n2 = lhs.checked_add(rhs)?;
            let d2 = d.checked_mul(den / g)?;
            let r = gcd(n2, d2).max(1);
            Some((n2 / r, d2 / r))
        });
    }

    fn divided_by(&self, k: u128) -> f64 {
        match self.exact.and_then(|(n, d)| Some((n, d.checked_mul(k)?))) {
            Some((n, d)) => {
                let g = gcd(n, d).max(1);
                (n / g) as f64 / (d / g) as f64
            }
            None => self.approx / k as f64,
        }
    }
}

/// Confidence used for ranking.
pub fn ranking_confidence(mask: &ObjectMask) -> f64 {
    mask.confidence.unwrap_or(1.0)
}

/// Indices of `preds` in ranking order.
pub fn rank_predictions(preds: &[ObjectMask]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        ranking_confidence(&preds[b])
            .total_cmp(&ranking_confidence(&preds[a]))
            .then(preds[b].pixel_count().cmp(&preds[a].pixel_count()))
            .then(a.cmp(&b))
    });
    order
}

/// Pairwise IoUs of one image's predictions and ground truth, computed once
/// and reused for every threshold.
#[derive(Debug, Clone)]
pub struct IouTable {
    order: Vec<usize>,
    confidences: Vec<f64>,
    pixel_counts: Vec<u64>,
    n_gt: usize,
    /// Row per prediction (input order), column per ground-truth object.
    ious: Vec<f64>,
}

impl IouTable {
    pub fn new(preds: &[ObjectMask], gts: &[ObjectMask]) -> Result<Self> {
        let n_gt = gts.len();
        let mut ious = vec![0.0; preds.len() * n_gt];
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                ious[i * n_gt + j] = p.overlap(g)?.iou;
            }
        }
        Ok(IouTable {
            order: rank_predictions(preds),
            confidences: preds.iter().map(ranking_confidence).collect(),
            pixel_counts: preds.iter().map(ObjectMask::pixel_count).collect(),
            n_gt,
            ious,
        })
    }

    pub fn iou(&self, pred: usize, gt: usize) -> f64 {
        self.ious[pred * self.n_gt + gt]
    }

    pub fn matches(&self, threshold: f64) -> RankedMatches {
        let mut taken = vec![false; self.n_gt];
        let predictions = self
            .order
            .iter()
            .map(|&p| {
                let mut best: Option<(usize, f64)> = None;
                for g in (0..self.n_gt).filter(|&g| !taken[g]) {
                    let iou = self.iou(p, g);
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                let best_iou = best.map_or(0.0, |(_, v)| v);
                let gt = best
                    .filter(|&(_, v)| v > 0.0 && v >= threshold)
                    .map(|(g, _)| g);
                if let Some(g) = gt {
                    taken[g] = true;
                }
                RankedPrediction {
                    index: p,
                    confidence: self.confidences[p],
                    pixel_count: self.pixel_counts[p],
                    gt,
                    iou: best_iou,
                    is_tp: gt.is_some(),
                }
            })
            .collect();
        RankedMatches {
            threshold,
            predictions,
            total_gt: self.n_gt,
        }
    }
}

/// Greedy matching of one image's predictions against its ground truth.
pub fn match_objects(
    preds: &[ObjectMask],
    gts: &[ObjectMask],
    threshold: f64,
) -> Result<RankedMatches> {
    Ok(IouTable::new(preds, gts)?.matches(threshold))
}

/// AP per threshold and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap_at: BTreeMap<String, f64>,
    pub map_range: f64,
}

impl ApResult {
    pub fn from_values(thresholds: &[f64], values: &[f64]) -> Self {
        let ap_at = thresholds
            .iter()
            .zip(values)
            .map(|(&t, &v)| (threshold_key(t), v))
            .collect();
        ApResult {
            ap_at,
            map_range: mean(values),
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// AP at each threshold with fresh matching per threshold.
pub fn map_over_thresholds(
    preds: &[ObjectMask],
    gts: &[ObjectMask],
    thresholds: &[f64],
) -> Result<ApResult> {
    if thresholds.is_empty() {
        return Err(Error::Config("empty threshold list".into()));
    }
    let table = IouTable::new(preds, gts)?;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| table.matches(t).average_precision())
        .collect();
    Ok(ApResult::from_values(thresholds, &values))
}

/// Mean of per-class mAP values.
pub fn map_multiclass(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::Range("mAP over zero classes".into()));
    }
    Ok(mean(per_class))
}

/// Matches of one image, per class and per threshold.
#[derive(Debug, Clone)]
pub struct ImageMatches {
    pub thresholds: Vec<f64>,
    /// For each class present in either set, one entry per threshold.
    pub classes: BTreeMap<u16, Vec<RankedMatches>>,
}

impl ImageMatches {
    /// Per-class AP results on this image alone.
    pub fn per_class(&self) -> BTreeMap<u16, ApResult> {
        self.classes
            .iter()
            .map(|(&c, runs)| {
                let values: Vec<f64> = runs.iter().map(RankedMatches::average_precision).collect();
                (c, ApResult::from_values(&self.thresholds, &values))
            })
            .collect()
    }

    /// mAP@range averaged over classes present in either set; 1 for an
    /// image with no objects at all.
    pub fn map(&self) -> f64 {
        let per: Vec<f64> = self.per_class().values().map(|r| r.map_range).collect();
        map_multiclass(&per).unwrap_or(1.0)
    }
}

/// Splits masks by class and matches each class at every threshold.
pub fn match_image(
    preds: &[ObjectMask],
    gts: &[ObjectMask],
    thresholds: &[f64],
) -> Result<ImageMatches> {
    if thresholds.is_empty() {
        return Err(Error::Config("empty threshold list".into()));
    }
    let class_ids: BTreeSet<u16> = preds.iter().chain(gts).map(|m| m.class_id).collect();
    let mut classes = BTreeMap::new();
    for c in class_ids {
        let p: Vec<ObjectMask> = preds.iter().filter(|m| m.class_id == c).cloned().collect();
        let g: Vec<ObjectMask> = gts.iter().filter(|m| m.class_id == c).cloned().collect();
        let table = IouTable::new(&p, &g)?;
        classes.insert(c, thresholds.iter().map(|&t| table.matches(t)).collect());
    }
    Ok(ImageMatches {
        thresholds: thresholds.to_vec(),
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub num_gt: usize,
    pub num_pred: usize,
    #[serde(flatten)]
    pub ap: ApResult,
}

/// Dataset-level AP with predictions pooled across images per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub per_class: BTreeMap<u16, ClassReport>,
    /// Class mean of AP at each threshold.
    pub ap_at: BTreeMap<String, f64>,
    /// Class mean of mAP@range.
    pub map: f64,
}

/// Pools the ranked predictions of all images into one ranking per class.
///
/// Ties across images are ordered by pixel count, then image position, then
/// rank within the image.
pub fn pool_images(images: &[ImageMatches], thresholds: &[f64]) -> Result<PooledReport> {
    if thresholds.is_empty() {
        return Err(Error::Config("empty threshold list".into()));
    }
    let mut by_class: BTreeMap<u16, Vec<(usize, &Vec<RankedMatches>)>> = BTreeMap::new();
    for (img, m) in images.iter().enumerate() {
        if m.thresholds.len() != thresholds.len() {
            return Err(Error::Config("images matched with different thresholds".into()));
        }
        for (&c, runs) in &m.classes {
            by_class.entry(c).or_default().push((img, runs));
        }
    }
    let mut per_class = BTreeMap::new();
    for (c, entries) in by_class {
        // (confidence, pixel_count, image, rank, runs)
        let mut ranked: Vec<(f64, u64, usize, usize, &Vec<RankedMatches>)> = Vec::new();
        let mut num_gt = 0;
        for &(img, runs) in &entries {
            num_gt += runs[0].total_gt;
            for (rank, p) in runs[0].predictions.iter().enumerate() {
                ranked.push((p.confidence, p.pixel_count, img, rank, runs));
            }
        }
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let values: Vec<f64> = (0..thresholds.len())
            .map(|k| {
                average_precision(
                    ranked.iter().map(|r| r.4[k].predictions[r.3].is_tp),
                    num_gt,
                )
            })
            .collect();
        per_class.insert(
            c,
            ClassReport {
                num_gt,
                num_pred: ranked.len(),
                ap: ApResult::from_values(thresholds, &values),
            },
        );
    }
    let ap_at = thresholds
        .iter()
        .map(|&t| {
            let key = threshold_key(t);
            let vals: Vec<f64> = per_class.values().map(|r| r.ap.ap_at[&key]).collect();
            (key, map_multiclass(&vals).unwrap_or(1.0))
        })
        .collect();
    let maps: Vec<f64> = per_class.values().map(|r| r.ap.map_range).collect();
    Ok(PooledReport {
        per_class,
        ap_at,
        map: map_multiclass(&maps).unwrap_or(1.0),
    })
}
