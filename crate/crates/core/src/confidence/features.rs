//! Histogrammed object-shape statistics of one prediction.
//!
//! Eight features, each histogrammed into `B` bins and normalized to sum to 1:
//!
//! 1. box height / image height
//! 2. box width / image width
//! 3. box height / box width, over `[0, 4]`
//! 4. object area / image area
//! 5. object area / box area
//! 6. box area / image area
//! 7. vertical centroid distance / image height, over unordered box pairs
//! 8. horizontal centroid distance / image width, over unordered box pairs
//!
//! All ranges except feature 3 are `[0, 1]`; values past the range land in
//! the last bin. Object area is the pixel count; boxes are inclusive pixel boxes.

use crate::raster::BBox;
use crate::{Error, ObjectMask, Result};

pub const FEATURE_COUNT: usize = 8;
pub const DEFAULT_BINS: usize = 10;

const ASPECT_RANGE: f64 = 4.0;

fn bin_index(value: f64, hi: f64, bins: usize) -> usize {
    let idx = (value / hi * bins as f64).floor();
    if idx.is_nan() || idx < 0.0 {
        0
    } else {
        (idx as usize).min(bins - 1)
    }
}

fn histogram(samples: &[f64], hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in samples {
        h[bin_index(v, hi, bins)] += 1.0;
    }
    if !samples.is_empty() {
        let n = samples.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
    }
    h
}

/// Feature vector of length `8 * bins`; all zeros for an empty prediction.
pub fn object_features(pred: &[ObjectMask], width: u32, height: u32, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Config("feature histograms need at least one bin".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Dimension("image dimensions must be positive".into()));
    }
    let (w, h) = (width as f64, height as f64);
    let img_area = w * h;
    let boxes: Vec<(BBox, f64)> = pred
        .iter()
        .filter_map(|m| m.bbox().map(|b| (b, m.pixel_count() as f64)))
        .collect();
    let mut samples: [Vec<f64>; FEATURE_COUNT] = Default::default();
    for &(b, area) in &boxes {
        let (bw, bh) = (b.width() as f64, b.height() as f64);
        let box_area = bw * bh;
        samples[0].push(bh / h);
        samples[1].push(bw / w);
        samples[2].push(bh / bw);
        samples[3].push(area / img_area);
        samples[4].push(area / box_area);
        samples[5].push(box_area / img_area);
    }
    for (i, (a, _)) in boxes.iter().enumerate() {
        let (ax, ay) = a.centroid();
        for (b, _) in &boxes[i + 1..] {
            let (bx, by) = b.centroid();
            samples[6].push((ay - by).abs() / h);
            samples[7].push((ax - bx).abs() / w);
        }
    }
    let mut out = Vec::with_capacity(FEATURE_COUNT * bins);
    for (k, s) in samples.iter().enumerate() {
        let hi = if k == 2 { ASPECT_RANGE } else { 1.0 };
        out.extend(histogram(s, hi, bins));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(gw: u32, gh: u32, x0: u32, y0: u32, w: u32, h: u32) -> ObjectMask {
        ObjectMask::from_pixels(
            gw,
            gh,
            (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y))),
        )
    }

    fn feature(v: &[f64], k: usize) -> &[f64] {
        &v[k * DEFAULT_BINS..(k + 1) * DEFAULT_BINS]
    }

    #[test]
    fn empty_prediction_is_zero() {
        let v = object_features(&[], 100, 100, DEFAULT_BINS).unwrap();
        assert_eq!(v, vec![0.0; 80]);
        assert!(object_features(&[], 100, 100, 0).is_err());
    }

    #[test]
    fn full_image_rectangle() {
        let v = object_features(&[block(40, 30, 0, 0, 40, 30)], 40, 30, DEFAULT_BINS).unwrap();
        for k in [0, 1, 3, 4, 5] {
            assert_eq!(feature(&v, k)[9], 1.0, "feature {}", k + 1);
            assert_eq!(feature(&v, k).iter().sum::<f64>(), 1.0);
        }
        // aspect 30/40 = 0.75 over [0, 4] -> bin 1
        assert_eq!(feature(&v, 2)[1], 1.0);
        assert_eq!(feature(&v, 6), &[0.0; 10]);
        assert_eq!(feature(&v, 7), &[0.0; 10]);
    }

    #[test]
    fn centroid_distances() {
        let objs = [block(100, 100, 0, 0, 10, 10), block(100, 100, 0, 50, 10, 10)];
        let v = object_features(&objs, 100, 100, DEFAULT_BINS).unwrap();
        // centroids (5, 5) and (5, 55): dy / h = 0.5 -> bin 5, dx / w = 0 -> bin 0
        let mut f7 = [0.0; 10];
        f7[5] = 1.0;
        let mut f8 = [0.0; 10];
        f8[0] = 1.0;
        assert_eq!(feature(&v, 6), &f7);
        assert_eq!(feature(&v, 7), &f8);
    }

    #[test]
    fn overflow_goes_to_last_bin() {
        // aspect 20 / 1 = 20 > 4
        let v = object_features(&[block(50, 50, 0, 0, 1, 20)], 50, 50, DEFAULT_BINS).unwrap();
        assert_eq!(feature(&v, 2)[9], 1.0);
    }

    proptest! {
        #[test]
        fn invariant_under_uniform_scaling(
            boxes in prop::collection::vec((0u32..20, 0u32..20, 1u32..10, 1u32..10), 0..5),
            s in 1u32..4,
        ) {
            let small: Vec<ObjectMask> = boxes.iter().map(|&(x, y, w, h)| block(30, 30, x, y, w, h)).collect();
            let big: Vec<ObjectMask> = boxes.iter().map(|&(x, y, w, h)| block(30 * s, 30 * s, x * s, y * s, w * s, h * s)).collect();
            let a = object_features(&small, 30, 30, DEFAULT_BINS).unwrap();
            let b = object_features(&big, 30 * s, 30 * s, DEFAULT_BINS).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn histograms_sum_to_one_or_zero(boxes in prop::collection::vec((0u32..20, 0u32..20, 1u32..10, 1u32..10), 0..5)) {
            let objs: Vec<ObjectMask> = boxes.iter().map(|&(x, y, w, h)| block(30, 30, x, y, w, h)).collect();
            let v = object_features(&objs, 30, 30, DEFAULT_BINS).unwrap();
            for k in 0..FEATURE_COUNT {
                let s: f64 = feature(&v, k).iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            }
        }
    }
}
