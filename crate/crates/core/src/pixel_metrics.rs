//! Pixel-level confusion counts and IoU / precision / recall / F1.
//!
//! Zero denominators follow the agreement-on-absence convention: a ratio
//! `0/0` is 1, so a class absent from both masks scores 1 everywhere, while
//! `TP = 0` with false positives gives precision 0 and with false negatives
//! gives recall 0.

use serde::{Deserialize, Serialize};

use crate::{Error, LabelMask, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    /// Present in at least one of the two masks.
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Per-class counts, indexed by class id (index 0 is background).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Element-wise sum (micro aggregation over pages).
    pub fn accumulate(&mut self, other: &ConfusionCounts) {
        if self.classes.len() < other.classes.len() {
            self.classes.resize(other.classes.len(), ClassCounts::default());
        }
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.add(b);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub const PERFECT: ClassMetrics = ClassMetrics {
        iou: 1.0,
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };

    pub fn from_counts(c: &ClassCounts) -> Self {
        ClassMetrics {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        }
    }

    fn mean<'a>(items: impl Iterator<Item = &'a ClassMetrics>) -> Option<ClassMetrics> {
        let mut n = 0usize;
        let mut acc = [0.0f64; 4];
        for m in items {
            n += 1;
            acc[0] += m.iou;
            acc[1] += m.precision;
            acc[2] += m.recall;
            acc[3] += m.f1;
        }
        (n > 0).then(|| ClassMetrics {
            iou: acc[0] / n as f64,
            precision: acc[1] / n as f64,
            recall: acc[2] / n as f64,
            f1: acc[3] / n as f64,
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub class_id: u16,
    pub present: bool,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    /// Non-background classes, in id order.
    pub per_class: Vec<PerClass>,
    /// Mean over non-background classes present in either mask; all 1 when none is.
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
}

/// Counts TP / FP / FN per class between a predicted and a reference label mask.
pub fn pixel_confusion(
    pred: &LabelMask,
    gt: &LabelMask,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, reference is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let k = num_classes;
    // joint[p * k + g] = pixels with prediction p and reference g.
    let mut joint = vec![0u64; k * k];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p as usize, g as usize);
        if p >= k || g >= k {
            return Err(Error::Range(format!(
                "class id {} not below num_classes {k}",
                p.max(g)
            )));
        }
        joint[p * k + g] += 1;
    }
    let classes = (0..k)
        .map(|c| {
            let tp = joint[c * k + c];
            let pred_c: u64 = joint[c * k..(c + 1) * k].iter().sum();
            let gt_c: u64 = (0..k).map(|p| joint[p * k + c]).sum();
            ClassCounts {
                tp,
                fp: pred_c - tp,
                fn_: gt_c - tp,
            }
        })
        .collect();
    Ok(ConfusionCounts { classes })
}

/// Metrics per non-background class and their macro average.
pub fn pixel_metrics(cc: &ConfusionCounts) -> PixelMetrics {
    let per_class: Vec<PerClass> = cc
        .classes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, counts)| PerClass {
            class_id: c as u16,
            present: counts.is_present(),
            metrics: ClassMetrics::from_counts(counts),
        })
        .collect();
    let macro_avg = ClassMetrics::mean(per_class.iter().filter(|p| p.present).map(|p| &p.metrics))
        .unwrap_or(ClassMetrics::PERFECT);
    PixelMetrics {
        per_class,
        macro_avg,
    }
}

/// Dataset aggregation: metrics of the summed counts, and the mean of per-page macros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSummary {
    pub micro: PixelMetrics,
    pub page_macro_mean: ClassMetrics,
    pub pages: usize,
}

pub fn summarize_pages(pages: &[ConfusionCounts]) -> PixelSummary {
    let mut total = ConfusionCounts::default();
    for p in pages {
        total.accumulate(p);
    }
    let macros: Vec<ClassMetrics> = pages.iter().map(|p| pixel_metrics(p).macro_avg).collect();
    PixelSummary {
        micro: pixel_metrics(&total),
        page_macro_mean: ClassMetrics::mean(macros.iter()).unwrap_or(ClassMetrics::PERFECT),
        pages: pages.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_block(x0: u32, y0: u32, w: u32, h: u32, class: u16) -> LabelMask {
        let mut m = LabelMask::new(10, 10);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, class);
            }
        }
        m
    }

    #[test]
    fn identical_masks() {
        let m = with_block(2, 2, 4, 4, 1);
        let cc = pixel_confusion(&m, &m, 2).unwrap();
        assert_eq!(cc.classes[1], ClassCounts { tp: 16, fp: 0, fn_: 0 });
    }

    #[test]
    fn empty_prediction() {
        let cc = pixel_confusion(&LabelMask::new(10, 10), &with_block(2, 2, 4, 4, 1), 2).unwrap();
        assert_eq!(cc.classes[1], ClassCounts { tp: 0, fp: 0, fn_: 16 });
    }

    #[test]
    fn shifted_block() {
        let cc = pixel_confusion(&with_block(3, 2, 4, 4, 1), &with_block(2, 2, 4, 4, 1), 2).unwrap();
        assert_eq!(cc.classes[1], ClassCounts { tp: 12, fp: 4, fn_: 4 });
        let m = ClassMetrics::from_counts(&cc.classes[1]);
        assert_eq!(m.iou, 0.6);
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn zero_denominator_conventions() {
        assert_eq!(ClassMetrics::from_counts(&ClassCounts::default()), ClassMetrics::PERFECT);
        // TP=0, FP=5, FN=0: P = 0/5, R = 0/0 -> 1, IoU = 0/5, F1 = 0/5.
        let m = ClassMetrics::from_counts(&ClassCounts { tp: 0, fp: 5, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.iou, m.f1), (0.0, 1.0, 0.0, 0.0));
        let m = ClassMetrics::from_counts(&ClassCounts { tp: 0, fp: 0, fn_: 5 });
        assert_eq!((m.precision, m.recall, m.iou, m.f1), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn macro_skips_absent_classes() {
        let cc = pixel_confusion(&with_block(3, 2, 4, 4, 1), &with_block(2, 2, 4, 4, 1), 4).unwrap();
        let pm = pixel_metrics(&cc);
        assert_eq!(pm.per_class.len(), 3);
        assert_eq!(pm.macro_avg.iou, 0.6);
        let blank = pixel_metrics(&pixel_confusion(&LabelMask::new(3, 3), &LabelMask::new(3, 3), 2).unwrap());
        assert_eq!(blank.macro_avg, ClassMetrics::PERFECT);
    }

    #[test]
    fn errors() {
        let a = LabelMask::new(3, 3);
        assert!(matches!(pixel_confusion(&a, &LabelMask::new(3, 4), 2), Err(Error::Dimension(_))));
        assert!(matches!(pixel_confusion(&with_block(0, 0, 1, 1, 2), &LabelMask::new(10, 10), 2), Err(Error::Range(_))));
    }

    #[test]
    fn summary_reports_micro_and_page_macro() {
        let p1 = pixel_confusion(&with_block(2, 2, 4, 4, 1), &with_block(2, 2, 4, 4, 1), 2).unwrap();
        let p2 = pixel_confusion(&LabelMask::new(10, 10), &with_block(0, 0, 4, 4, 1), 2).unwrap();
        let s = summarize_pages(&[p1, p2]);
        assert_eq!(s.micro.macro_avg.iou, 0.5);
        assert_eq!(s.page_macro_mean.iou, 0.5);
        assert_eq!(s.micro.macro_avg.recall, 0.5);
    }

    proptest! {
        #[test]
        fn f1_iou_identity(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000) {
            let m = ClassMetrics::from_counts(&ClassCounts { tp, fp, fn_ });
            prop_assert!(m.iou <= m.f1 + 1e-15 && m.f1 <= 1.0);
            prop_assert!((m.f1 * (1.0 + m.iou) - 2.0 * m.iou).abs() <= 1e-12);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() <= 1e-12);
            }
        }

        #[test]
        fn swapping_swaps_fp_and_fn(a in prop::collection::vec(0u16..3, 36), b in prop::collection::vec(0u16..3, 36)) {
            let pa = LabelMask::from_data(6, 6, a).unwrap();
            let pb = LabelMask::from_data(6, 6, b).unwrap();
            let ab = pixel_confusion(&pa, &pb, 3).unwrap();
            let ba = pixel_confusion(&pb, &pa, 3).unwrap();
            for (x, y) in ab.classes.iter().zip(&ba.classes) {
                prop_assert_eq!((x.tp, x.fp, x.fn_), (y.tp, y.fn_, y.fp));
            }
        }

        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((0u16..3, 0u16..3), 36), rot in 0usize..36) {
            let (a, b): (Vec<u16>, Vec<u16>) = pairs.iter().copied().unzip();
            let mut rotated = pairs.clone();
            rotated.rotate_left(rot);
            let (ra, rb): (Vec<u16>, Vec<u16>) = rotated.into_iter().unzip();
            let c1 = pixel_confusion(&LabelMask::from_data(6, 6, a).unwrap(), &LabelMask::from_data(6, 6, b).unwrap(), 3).unwrap();
            let c2 = pixel_confusion(&LabelMask::from_data(6, 6, ra).unwrap(), &LabelMask::from_data(6, 6, rb).unwrap(), 3).unwrap();
            prop_assert_eq!(c1, c2);
        }
    }
}
