//! Annotation uniformization.
//!
//! Pages are first rescaled to the working resolution, then every object is
//! rasterized and each unordered pair is inspected once, in `(i, j)` order with
//! `i < j`, against the masks as modified so far:
//!
//! - disjoint but 8-adjacent: both masks are eroded;
//! - overlapping, unless both input overlap ratios reach the threshold: the
//!   object whose current overlap ratio is smaller gives up the shared pixels;
//! - overlapping with both input ratios at or above the threshold: kept.
//!
//! Masks are then drawn in object order into one label image.

use serde::{Deserialize, Serialize};

use crate::raster::{erode, page_masks, ObjectMask};
use crate::{Error, LabelMask, PageRecord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformizeConfig {
    pub target_long_side: u32,
    pub overlap_ratio_threshold: f64,
    pub erosion_radius: u32,
}

impl UniformizeConfig {
    pub const DEFAULT_LONG_SIDE: u32 = 768;
    pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.20;
    pub const DEFAULT_EROSION_RADIUS: u32 = 1;

    pub fn validate(&self) -> Result<()> {
        if self.target_long_side == 0 || self.erosion_radius == 0 {
            return Err(Error::Config(
                "target_long_side and erosion_radius must be positive".into(),
            ));
        }
        if !(self.overlap_ratio_threshold > 0.0 && self.overlap_ratio_threshold < 1.0) {
            return Err(Error::Config(format!(
                "overlap_ratio_threshold {} outside (0, 1)",
                self.overlap_ratio_threshold
            )));
        }
        Ok(())
    }
}

impl Default for UniformizeConfig {
    fn default() -> Self {
        UniformizeConfig {
            target_long_side: Self::DEFAULT_LONG_SIDE,
            overlap_ratio_threshold: Self::DEFAULT_OVERLAP_THRESHOLD,
            erosion_radius: Self::DEFAULT_EROSION_RADIUS,
        }
    }
}

/// Rescales a page so its long side equals `target_long_side`.
///
/// Dimensions are rounded to the nearest integer (at least 1); vertices keep
/// their fractional scaled values.
pub fn scale_page(page: &PageRecord, target_long_side: u32) -> PageRecord {
    let long = page.width.max(page.height);
    if long == target_long_side {
        return page.clone();
    }
    let s = target_long_side as f64 / long as f64;
    let dim = |d: u32| ((d as f64 * s).round() as u32).max(1);
    let mut out = page.clone();
    out.width = dim(page.width);
    out.height = dim(page.height);
    for obj in out.objects.iter_mut() {
        obj.polygon = obj.polygon.scaled(s);
    }
    out
}

/// How a pair of objects was handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAction {
    /// Adjacent without sharing pixels: both eroded.
    Eroded,
    /// Small overlap: `loser` gave up the shared pixels.
    Split { loser: usize },
    /// Large overlap on both sides: left as is.
    Kept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvent {
    pub first: usize,
    pub second: usize,
    pub action: PairAction,
}

#[derive(Debug, Clone)]
pub struct NormalizedPage {
    /// Rasterized input objects, before any adjustment.
    pub input_masks: Vec<ObjectMask>,
    /// Adjusted objects, same order and length as the page's objects.
    pub masks: Vec<ObjectMask>,
    pub label: LabelMask,
    pub events: Vec<PairEvent>,
    pub warnings: Vec<String>,
}

fn ratio(intersection: u64, area: u64) -> f64 {
    if area == 0 {
        0.0
    } else {
        intersection as f64 / area as f64
    }
}

/// Separates touching objects and splits small overlaps on a page that is
/// already at working resolution.
pub fn normalize_page(page: &PageRecord, cfg: &UniformizeConfig) -> Result<NormalizedPage> {
    cfg.validate()?;
    let input_masks = page_masks(page);
    let mut masks = input_masks.clone();
    let mut events = Vec::new();
    let n = masks.len();
    let threshold = cfg.overlap_ratio_threshold;

    for i in 0..n {
        for j in (i + 1)..n {
            let inter = masks[i].intersection_count(&masks[j]);
            if inter == 0 {
                if masks[i].touches(&masks[j]) {
                    masks[i] = erode(&masks[i], cfg.erosion_radius);
                    masks[j] = erode(&masks[j], cfg.erosion_radius);
                    events.push(PairEvent {
                        first: i,
                        second: j,
                        action: PairAction::Eroded,
                    });
                }
                continue;
            }
            let input_inter = input_masks[i].intersection_count(&input_masks[j]);
            let keep = ratio(input_inter, input_masks[i].pixel_count()) >= threshold
                && ratio(input_inter, input_masks[j].pixel_count()) >= threshold;
            if keep {
                events.push(PairEvent {
                    first: i,
                    second: j,
                    action: PairAction::Kept,
                });
                continue;
            }
            let ri = ratio(inter, masks[i].pixel_count());
            let rj = ratio(inter, masks[j].pixel_count());
            let loser = if ri < rj { i } else { j };
            let winner = if loser == i { j } else { i };
            masks[loser] = masks[loser].difference(&masks[winner]);
            events.push(PairEvent {
                first: i,
                second: j,
                action: PairAction::Split { loser },
            });
        }
    }

    let mut warnings = Vec::new();
    let mut label = LabelMask::new(page.width, page.height);
    for (idx, m) in masks.iter().enumerate() {
        if m.is_empty() && !input_masks[idx].is_empty() {
            warnings.push(format!(
                "page {:?} object {idx}: erased by uniformization",
                page.image_id
            ));
        }
        m.draw_into(&mut label);
    }
    Ok(NormalizedPage {
        input_masks,
        masks,
        label,
        events,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ObjectInstance, Polygon};

    fn page(rects: &[(f64, f64, f64, f64)]) -> PageRecord {
        let mut p = PageRecord::new("p", 40, 40);
        for &(x0, y0, x1, y1) in rects {
            p.objects
                .push(ObjectInstance::new(1, Polygon::rect(x0, y0, x1, y1)));
        }
        p
    }

    #[test]
    fn defaults() {
        let c = UniformizeConfig::default();
        assert_eq!(c.target_long_side, 768);
        assert_eq!(c.overlap_ratio_threshold, 0.20);
        assert_eq!(c.erosion_radius, 1);
    }

    #[test]
    fn scaling_halves_large_pages() {
        let mut p = PageRecord::new("p", 1536, 1024);
        p.objects
            .push(ObjectInstance::new(1, Polygon::rect(10.0, 20.0, 101.0, 40.0)));
        let s = scale_page(&p, 768);
        assert_eq!((s.width, s.height), (768, 512));
        assert_eq!(s.objects[0].polygon, Polygon::rect(5.0, 10.0, 50.5, 20.0));
    }

    #[test]
    fn scaling_is_identity_at_target() {
        let p = page(&[(1.0, 1.0, 5.0, 5.0)]);
        let mut q = p.clone();
        q.width = 768;
        assert_eq!(scale_page(&q, 768), q);
    }

    #[test]
    fn scaling_rounds_dimensions() {
        // 100 * 768 / 3000 = 25.6
        let s = scale_page(&PageRecord::new("p", 100, 3000), 768);
        assert_eq!((s.width, s.height), (26, 768));
        let tiny = scale_page(&PageRecord::new("p", 1, 3000), 768);
        assert_eq!(tiny.width, 1);
    }

    #[test]
    fn separated_objects_are_untouched() {
        let p = page(&[(0.0, 0.0, 5.0, 5.0), (10.0, 10.0, 15.0, 15.0)]);
        let out = normalize_page(&p, &UniformizeConfig::default()).unwrap();
        assert_eq!(out.masks, out.input_masks);
        assert!(out.events.is_empty());
        assert_eq!(out.label.data.iter().filter(|&&v| v == 1).count(), 50);
    }

    #[test]
    fn small_overlap_is_split() {
        // A = 10x10 at (0,0); B = 8 wide, 10 tall, starting at column 9.
        let p = page(&[(0.0, 0.0, 10.0, 10.0), (9.0, 0.0, 17.0, 10.0)]);
        let out = normalize_page(&p, &UniformizeConfig::default()).unwrap();
        // Brute-force counts: shared column 9 over 10 rows; ratios 0.10 and 0.125.
        let a: Vec<(u32, u32)> = (0..10).flat_map(|y| (0..10).map(move |x| (x, y))).collect();
        let b: Vec<(u32, u32)> = (0..10).flat_map(|y| (9..17).map(move |x| (x, y))).collect();
        let shared = a.iter().filter(|p| b.contains(p)).count();
        assert_eq!(shared, 10);
        assert_eq!(out.input_masks[0].intersection_count(&out.input_masks[1]), 10);
        assert_eq!(out.masks[0].pixel_count() as usize, a.len() - shared);
        assert_eq!(out.masks[1].pixel_count() as usize, b.len());
        assert_eq!(
            out.events,
            vec![PairEvent { first: 0, second: 1, action: PairAction::Split { loser: 0 } }]
        );
    }

    #[test]
    fn large_overlap_is_kept() {
        let p = page(&[(0.0, 0.0, 10.0, 10.0), (5.0, 0.0, 15.0, 10.0)]);
        let out = normalize_page(&p, &UniformizeConfig::default()).unwrap();
        assert_eq!(out.masks, out.input_masks);
        assert_eq!(out.events[0].action, PairAction::Kept);
    }

    #[test]
    fn touching_objects_are_both_eroded() {
        let p = page(&[(0.0, 0.0, 10.0, 5.0), (0.0, 5.0, 10.0, 10.0)]);
        let out = normalize_page(&p, &UniformizeConfig::default()).unwrap();
        assert_eq!(out.events[0].action, PairAction::Eroded);
        // Each 10x5 block eroded by 1 leaves 8x3.
        assert_eq!(out.masks[0].pixel_count(), 24);
        assert_eq!(out.masks[1].pixel_count(), 24);
        assert!(!out.masks[0].touches(&out.masks[1]));
    }

    #[test]
    fn erased_objects_are_reported() {
        let p = page(&[(0.0, 0.0, 10.0, 1.0), (0.0, 1.0, 10.0, 2.0)]);
        let out = normalize_page(&p, &UniformizeConfig::default()).unwrap();
        assert_eq!(out.masks.len(), 2);
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn bad_threshold_is_rejected() {
        let cfg = UniformizeConfig { overlap_ratio_threshold: 1.0, ..Default::default() };
        assert!(normalize_page(&page(&[]), &cfg).is_err());
    }
}
