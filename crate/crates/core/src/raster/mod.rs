//! Pixel-set geometry: rasterization, connected components, erosion and overlap.
//!
//! Every object is an [`ObjectMask`]: a tight bounding box plus a bitset of the
//! member pixels inside it. Operations between masks only touch the rows and
//! words where both boxes intersect.

mod components;
mod contour;
mod fill;
mod morphology;

pub use components::{connected_components, extract_objects};
pub use contour::trace_outline;
pub use fill::{page_masks, rasterize_object, rasterize_polygon};
pub use morphology::erode;

use serde::{Deserialize, Serialize};

use crate::{Error, LabelMask, Result};

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Centre of the box in continuous pixel coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64 + 1.0) / 2.0,
            (self.y0 as f64 + self.y1 as f64 + 1.0) / 2.0,
        )
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

/// Post-processing of probability maps into objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// A pixel is foreground when its best object-class probability is strictly above this.
    pub threshold: f64,
    /// Components with fewer pixels are discarded.
    pub min_cc: u64,
    pub connectivity: Connectivity,
}

impl ExtractConfig {
    pub const DEFAULT_THRESHOLD: f64 = 0.7;
    pub const DEFAULT_MIN_CC: u64 = 50;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: Self::DEFAULT_THRESHOLD,
            min_cc: Self::DEFAULT_MIN_CC,
            connectivity: Connectivity::Eight,
        }
    }
}

/// Pixel counts of two masks' overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

/// Rasterized pixel set of one object on an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    grid_width: u32,
    grid_height: u32,
    bbox: Option<BBox>,
    /// u64 words per bbox row.
    stride: usize,
    bits: Vec<u64>,
    pixel_count: u64,
    pub class_id: u16,
    pub confidence: Option<f64>,
}

impl ObjectMask {
    pub fn empty(grid_width: u32, grid_height: u32) -> Self {
        ObjectMask {
            grid_width,
            grid_height,
            bbox: None,
            stride: 0,
            bits: Vec::new(),
            pixel_count: 0,
            class_id: 0,
            confidence: None,
        }
    }

    /// Builds a mask from a dense boolean window whose top-left pixel is `origin`.
    /// Window pixels outside the grid are ignored. The bounding box is tightened.
    pub fn from_dense(
        grid_width: u32,
        grid_height: u32,
        origin: (i64, i64),
        window_width: usize,
        dense: &[bool],
    ) -> Self {
        let mut mask = ObjectMask::empty(grid_width, grid_height);
        if window_width == 0 {
            return mask;
        }
        let window_height = dense.len() / window_width;
        let in_grid = |wx: usize, wy: usize| {
            let (x, y) = (origin.0 + wx as i64, origin.1 + wy as i64);
            x >= 0 && y >= 0 && x < grid_width as i64 && y < grid_height as i64
        };
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for wy in 0..window_height {
            let row = &dense[wy * window_width..(wy + 1) * window_width];
            for (wx, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                if in_grid(wx, wy) {
                    x0 = x0.min(wx);
                    x1 = x1.max(wx);
                    y0 = y0.min(wy);
                    y1 = y1.max(wy);
                }
            }
        }
        if x0 == usize::MAX {
            return mask;
        }
        let bbox = BBox {
            x0: (origin.0 + x0 as i64) as u32,
            y0: (origin.1 + y0 as i64) as u32,
            x1: (origin.0 + x1 as i64) as u32,
            y1: (origin.1 + y1 as i64) as u32,
        };
        let stride = (bbox.width() as usize).div_ceil(64);
        let mut bits = vec![0u64; stride * bbox.height() as usize];
        let mut count = 0u64;
        for wy in y0..=y1 {
            let row = &dense[wy * window_width..(wy + 1) * window_width];
            let out = &mut bits[(wy - y0) * stride..(wy - y0 + 1) * stride];
            for wx in x0..=x1 {
                if row[wx] && in_grid(wx, wy) {
                    let rel = wx - x0;
                    out[rel / 64] |= 1u64 << (rel % 64);
                    count += 1;
                }
            }
        }
        mask.bbox = Some(bbox);
        mask.stride = stride;
        mask.bits = bits;
        mask.pixel_count = count;
        mask
    }

    /// Builds a mask from explicit pixel coordinates (duplicates allowed).
    pub fn from_pixels(
        grid_width: u32,
        grid_height: u32,
        pixels: impl IntoIterator<Item = (u32, u32)>,
    ) -> Self {
        let pixels: Vec<(u32, u32)> = pixels
            .into_iter()
            .filter(|&(x, y)| x < grid_width && y < grid_height)
            .collect();
        let Some(x0) = pixels.iter().map(|p| p.0).min() else {
            return ObjectMask::empty(grid_width, grid_height);
        };
        let x1 = pixels.iter().map(|p| p.0).max().unwrap();
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let y1 = pixels.iter().map(|p| p.1).max().unwrap();
        let w = (x1 - x0 + 1) as usize;
        let mut dense = vec![false; w * (y1 - y0 + 1) as usize];
        for (x, y) in pixels {
            dense[(y - y0) as usize * w + (x - x0) as usize] = true;
        }
        ObjectMask::from_dense(grid_width, grid_height, (x0 as i64, y0 as i64), w, &dense)
    }

    pub fn with_class(mut self, class_id: u16) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn with_confidence(mut self, confidence: Option<f64>) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn grid(&self) -> (u32, u32) {
        (self.grid_width, self.grid_height)
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.bbox
    }

    pub fn pixel_count(&self) -> u64 {
        self.pixel_count
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        match self.bbox {
            Some(b) if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 => {
                let rel = (x - b.x0) as usize;
                let word = self.bits[(y - b.y0) as usize * self.stride + rel / 64];
                word >> (rel % 64) & 1 == 1
            }
            _ => false,
        }
    }

    /// Member pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let b = self.bbox.unwrap_or(BBox {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        });
        let rows = if self.bbox.is_some() { b.height() } else { 0 };
        (0..rows).flat_map(move |ry| {
            let row = &self.bits[ry as usize * self.stride..(ry as usize + 1) * self.stride];
            row.iter().enumerate().flat_map(move |(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let bit = w.trailing_zeros();
                    w &= w - 1;
                    Some((b.x0 + wi as u32 * 64 + bit, b.y0 + ry))
                })
            })
        })
    }

    /// 64 membership bits for pixels `x..x+64` of row `y` (bit i ↔ pixel x+i).
    #[inline]
    pub(crate) fn word_at(&self, y: i64, x: i64) -> u64 {
        let Some(b) = self.bbox else { return 0 };
        if y < b.y0 as i64 || y > b.y1 as i64 {
            return 0;
        }
        let rel = x - b.x0 as i64;
        let width = b.width() as i64;
        if rel >= width || rel <= -64 {
            return 0;
        }
        let row = &self.bits[(y - b.y0 as i64) as usize * self.stride..][..self.stride];
        if rel < 0 {
            return row[0] << (-rel);
        }
        let (wi, sh) = ((rel / 64) as usize, (rel % 64) as u32);
        let lo = row[wi] >> sh;
        let hi = if sh > 0 && wi + 1 < self.stride {
            row[wi + 1] << (64 - sh)
        } else {
            0
        };
        lo | hi
    }

    fn check_grid(&self, other: &ObjectMask) -> Result<()> {
        if self.grid() != other.grid() {
            return Err(Error::Dimension(format!(
                "masks live on different grids: {:?} vs {:?}",
                self.grid(),
                other.grid()
            )));
        }
        Ok(())
    }

    /// Exact number of shared pixels. Masks with disjoint boxes cost nothing.
    pub fn intersection_count(&self, other: &ObjectMask) -> u64 {
        let (Some(a), Some(b)) = (self.bbox, other.bbox) else {
            return 0;
        };
        if !a.intersects(&b) {
            return 0;
        }
        let (x0, x1) = (a.x0.max(b.x0) as i64, a.x1.min(b.x1) as i64);
        let (y0, y1) = (a.y0.max(b.y0) as i64, a.y1.min(b.y1) as i64);
        let mut count = 0u64;
        for y in y0..=y1 {
            let mut x = x0;
            while x <= x1 {
                count += (self.word_at(y, x) & other.word_at(y, x)).count_ones() as u64;
                x += 64;
            }
        }
        count
    }

    /// True when some pixel of `other` lies in the 8-neighbourhood of a pixel
    /// of `self` (shared pixels count too).
    pub fn touches(&self, other: &ObjectMask) -> bool {
        let (Some(a), Some(b)) = (self.bbox, other.bbox) else {
            return false;
        };
        let grown = BBox {
            x0: a.x0.saturating_sub(1),
            y0: a.y0.saturating_sub(1),
            x1: a.x1 + 1,
            y1: a.y1 + 1,
        };
        if !grown.intersects(&b) {
            return false;
        }
        let (x0, x1) = (grown.x0.max(b.x0) as i64, grown.x1.min(b.x1) as i64);
        let (y0, y1) = (grown.y0.max(b.y0) as i64, grown.y1.min(b.y1) as i64);
        for y in y0..=y1 {
            let mut x = x0;
            while x <= x1 {
                let theirs = other.word_at(y, x);
                if theirs != 0 {
                    let mut dilated = 0u64;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            dilated |= self.word_at(y + dy, x + dx);
                        }
                    }
                    if theirs & dilated != 0 {
                        return true;
                    }
                }
                x += 64;
            }
        }
        false
    }

    pub fn overlap(&self, other: &ObjectMask) -> Result<Overlap> {
        self.check_grid(other)?;
        let intersection = self.intersection_count(other);
        let union = self.pixel_count + other.pixel_count - intersection;
        let iou = if union == 0 {
            1.0
        } else {
            intersection as f64 / union as f64
        };
        Ok(Overlap {
            intersection,
            union,
            iou,
        })
    }

    /// Dense copy of the bounding-box window, row-major.
    pub(crate) fn to_dense(&self) -> Option<(BBox, Vec<bool>)> {
        let b = self.bbox?;
        let w = b.width() as usize;
        let mut dense = vec![false; w * b.height() as usize];
        for (x, y) in self.pixels() {
            dense[(y - b.y0) as usize * w + (x - b.x0) as usize] = true;
        }
        Some((b, dense))
    }

    /// Pixels of `self` that are not in `other`; class and confidence are kept.
    pub fn difference(&self, other: &ObjectMask) -> ObjectMask {
        let Some((b, mut dense)) = self.to_dense() else {
            return self.clone();
        };
        let w = b.width() as usize;
        for (x, y) in other.pixels() {
            if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 {
                dense[(y - b.y0) as usize * w + (x - b.x0) as usize] = false;
            }
        }
        ObjectMask::from_dense(
            self.grid_width,
            self.grid_height,
            (b.x0 as i64, b.y0 as i64),
            w,
            &dense,
        )
        .with_class(self.class_id)
        .with_confidence(self.confidence)
    }

    /// Paints the mask into a label image with its class id.
    pub fn draw_into(&self, label: &mut LabelMask) {
        for (x, y) in self.pixels() {
            if x < label.width && y < label.height {
                label.set(x, y, self.class_id);
            }
        }
    }
}

/// Intersection, union and IoU of two masks on the same grid.
///
/// Two empty masks agree perfectly (IoU 1); exactly one empty mask gives IoU 0.
pub fn mask_overlap(a: &ObjectMask, b: &ObjectMask) -> Result<Overlap> {
    a.overlap(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(x0: u32, y0: u32, w: u32, h: u32) -> ObjectMask {
        ObjectMask::from_pixels(
            200,
            100,
            (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y))),
        )
    }

    #[test]
    fn identical_masks_have_iou_one() {
        let a = block(3, 4, 5, 6);
        assert_eq!(mask_overlap(&a, &a.clone()).unwrap().iou, 1.0);
    }

    #[test]
    fn disjoint_masks_have_iou_zero() {
        let o = mask_overlap(&block(0, 0, 2, 2), &block(10, 10, 2, 2)).unwrap();
        assert_eq!((o.intersection, o.union, o.iou), (0, 8, 0.0));
    }

    #[test]
    fn shifted_block_overlap() {
        let o = mask_overlap(&block(0, 0, 2, 2), &block(1, 0, 2, 2)).unwrap();
        assert_eq!(o.intersection, 2);
        assert_eq!(o.union, 6);
        assert_eq!(o.iou, 1.0 / 3.0);
    }

    #[test]
    fn empty_masks_conventions() {
        let e = ObjectMask::empty(200, 100);
        assert_eq!(mask_overlap(&e, &e).unwrap().iou, 1.0);
        assert_eq!(mask_overlap(&e, &block(0, 0, 1, 1)).unwrap().iou, 0.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ObjectMask::from_pixels(10, 10, [(1, 1)]);
        assert_eq!(block(190, 0, 20, 1).pixel_count(), 10);
        let b = ObjectMask::from_pixels(11, 10, [(1, 1)]);
        assert!(matches!(mask_overlap(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn wide_masks_span_several_words() {
        let a = block(3, 0, 150, 2);
        let b = block(70, 1, 100, 3);
        assert_eq!(a.intersection_count(&b), 83);
        assert_eq!(a.pixels().count(), 300);
    }

    #[test]
    fn touching_is_eight_adjacency() {
        assert!(block(0, 0, 2, 2).touches(&block(2, 2, 2, 2)));
        assert!(block(0, 0, 2, 2).touches(&block(2, 0, 2, 2)));
        assert!(!block(0, 0, 2, 2).touches(&block(3, 0, 2, 2)));
        assert!(!block(0, 0, 2, 2).touches(&block(0, 3, 2, 2)));
    }

    #[test]
    fn difference_tightens_the_box() {
        let d = block(0, 0, 4, 4).difference(&block(0, 0, 4, 2));
        assert_eq!(d.pixel_count(), 8);
        assert_eq!(d.bbox().unwrap(), BBox { x0: 0, y0: 2, x1: 3, y1: 3 });
    }

    fn arb_mask() -> impl Strategy<Value = ObjectMask> {
        prop::collection::vec((0u32..90, 0u32..20), 0..60)
            .prop_map(|px| ObjectMask::from_pixels(90, 20, px))
    }

    proptest! {
        #[test]
        fn overlap_matches_set_algebra(a in arb_mask(), b in arb_mask()) {
            let sa: std::collections::BTreeSet<_> = a.pixels().collect();
            let sb: std::collections::BTreeSet<_> = b.pixels().collect();
            let o = mask_overlap(&a, &b).unwrap();
            prop_assert_eq!(o.intersection as usize, sa.intersection(&sb).count());
            prop_assert_eq!(o.union as usize, sa.union(&sb).count());
            prop_assert!((0.0..=1.0).contains(&o.iou));
            prop_assert_eq!(o.iou == 1.0, sa == sb);
            let r = mask_overlap(&b, &a).unwrap();
            prop_assert_eq!(o, r);
        }

        #[test]
        fn pixel_count_matches_members(a in arb_mask()) {
            prop_assert_eq!(a.pixels().count() as u64, a.pixel_count());
            if let Some(b) = a.bbox() {
                prop_assert!(a.pixels().any(|(x, _)| x == b.x0));
                prop_assert!(a.pixels().any(|(x, _)| x == b.x1));
                prop_assert!(a.pixels().any(|(_, y)| y == b.y0));
                prop_assert!(a.pixels().any(|(_, y)| y == b.y1));
            }
        }

        #[test]
        fn disjoint_boxes_never_overlap(a in arb_mask(), shift in 0u32..5) {
            if let Some(bb) = a.bbox() {
                let moved = ObjectMask::from_pixels(200, 20, a.pixels().map(|(x, y)| (x + bb.width() + shift + 90, y)));
                let a200 = ObjectMask::from_pixels(200, 20, a.pixels());
                prop_assert_eq!(a200.intersection_count(&moved), 0);
            }
        }
    }
}
