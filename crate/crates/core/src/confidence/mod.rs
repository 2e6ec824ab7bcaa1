//! Per-image confidence estimators.
//!
//! - PCE: mean over objects of each object's mean pixel probability.
//! - DAP: mean pairwise mAP@[.5,.95] between the members of a prediction ensemble.
//! - DOV: sample variance of the ensemble members' object counts (lower is better).
//! - mAP-RFR: a regression forest on histogrammed object-shape statistics.

mod features;
mod forest;

pub use features::{object_features, FEATURE_COUNT, DEFAULT_BINS};
pub use forest::{ForestParams, Node, RegressionForest, Tree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::at_map_precision;
use crate::object_metrics::{default_thresholds, match_image};
use crate::{Error, ObjectMask, ProbabilityMap, Result};

/// Default number of stochastic predictions per image.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Pce,
    Dap,
    Dov,
    MapRfr,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pce => "pce",
            Estimator::Dap => "dap",
            Estimator::Dov => "dov",
            Estimator::MapRfr => "map-rfr",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Estimator::Dov)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub value: f64,
    pub higher_is_better: bool,
    /// Set when the prediction had no object to score.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_detection: bool,
}

impl ConfidenceScore {
    pub fn new(value: f64, higher_is_better: bool) -> Self {
        ConfidenceScore {
            value,
            higher_is_better,
            no_detection: false,
        }
    }

    /// Value on a higher-is-better scale.
    pub fn oriented(&self) -> f64 {
        if self.higher_is_better {
            self.value
        } else {
            -self.value
        }
    }
}

/// Mean probability of the object's class over its pixels.
pub fn object_probability(mask: &ObjectMask, map: &ProbabilityMap) -> Result<f64> {
    if mask.grid() != (map.width(), map.height()) {
        return Err(Error::Dimension(format!(
            "object grid {:?} differs from probability map {}x{}",
            mask.grid(),
            map.width(),
            map.height()
        )));
    }
    if u32::from(mask.class_id) >= map.num_classes() {
        return Err(Error::Range(format!(
            "class {} not in a {}-class probability map",
            mask.class_id,
            map.num_classes()
        )));
    }
    if mask.is_empty() {
        return Ok(0.0);
    }
    let class = u32::from(mask.class_id);
    let sum: f64 = mask.pixels().map(|(x, y)| map.get(class, x, y) as f64).sum();
    Ok(at_map_precision(sum / mask.pixel_count() as f64))
}

fn mean_or_no_detection(values: impl ExactSizeIterator<Item = f64>) -> ConfidenceScore {
    let n = values.len();
    if n == 0 {
        return ConfidenceScore {
            value: 0.0,
            higher_is_better: true,
            no_detection: true,
        };
    }
    ConfidenceScore::new(values.sum::<f64>() / n as f64, true)
}

/// PCE read from the probability map.
pub fn pce(objects: &[ObjectMask], map: &ProbabilityMap) -> Result<ConfidenceScore> {
    let means = objects
        .iter()
        .map(|m| object_probability(m, map))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_or_no_detection(means.into_iter()))
}

/// PCE from confidences already stored on the objects (missing counts as 1).
pub fn pce_from_confidences(objects: &[ObjectMask]) -> ConfidenceScore {
    mean_or_no_detection(objects.iter().map(|m| m.confidence.unwrap_or(1.0)))
}

/// `N` predictions of one image from stochastic forward passes.
#[derive(Debug, Clone)]
pub struct PredictionEnsemble {
    pub image_id: String,
    pub members: Vec<Vec<ObjectMask>>,
}

impl PredictionEnsemble {
    pub fn new(image_id: impl Into<String>, members: Vec<Vec<ObjectMask>>) -> Result<Self> {
        let e = PredictionEnsemble {
            image_id: image_id.into(),
            members,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Config(format!(
                "ensemble for {:?} has {} member(s); at least 2 are needed",
                self.image_id,
                self.members.len()
            )));
        }
        let mut grids = self.members.iter().flatten().map(ObjectMask::grid);
        if let Some(first) = grids.next() {
            if let Some(other) = grids.find(|g| *g != first) {
                return Err(Error::Dimension(format!(
                    "ensemble for {:?} mixes grids {first:?} and {other:?}",
                    self.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Mean mAP@[.5,.95] over ordered member pairs, each pair scoring member `i`
/// as prediction against member `j` as reference.
pub fn dap(e: &PredictionEnsemble) -> Result<ConfidenceScore> {
    e.validate()?;
    let n = e.members.len();
    let thresholds = default_thresholds();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let maps = pairs
        .par_iter()
        .map(|&(i, j)| Ok(match_image(&e.members[i], &e.members[j], &thresholds)?.map()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConfidenceScore::new(
        maps.iter().sum::<f64>() / (n * n - n) as f64,
        true,
    ))
}

/// Sample variance of object counts.
pub fn dov(counts: &[usize]) -> Result<ConfidenceScore> {
    if counts.len() < 2 {
        return Err(Error::Config(format!(
            "variance of {} count(s); at least 2 are needed",
            counts.len()
        )));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
    Ok(ConfidenceScore::new(ss / (n - 1.0), false))
}

pub fn dov_ensemble(e: &PredictionEnsemble) -> Result<ConfidenceScore> {
    e.validate()?;
    dov(&e.counts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_metrics::map_over_thresholds;
    use proptest::prelude::*;

    fn block(x0: u32, y0: u32, w: u32, h: u32) -> ObjectMask {
        ObjectMask::from_pixels(
            20,
            20,
            (y0..y0 + h).flat_map(move |y| (x0..x0 + w).map(move |x| (x, y))),
        )
        .with_class(1)
    }

    fn map_with(values: &[((u32, u32), f32)]) -> ProbabilityMap {
        let mut m = ProbabilityMap::background(20, 20, 2);
        for &((x, y), v) in values {
            m.set(1, x, y, v);
            m.set(0, x, y, 1.0 - v);
        }
        m
    }

    #[test]
    fn pce_examples() {
        let full = map_with(&[((0, 0), 1.0), ((1, 0), 1.0)]);
        assert_eq!(pce(&[block(0, 0, 2, 1)], &full).unwrap().value, 1.0);

        let three = map_with(&[((0, 0), 0.9), ((1, 0), 0.8), ((2, 0), 0.7)]);
        let v = pce(&[block(0, 0, 3, 1)], &three).unwrap().value;
        assert!((v - 0.8).abs() < 1e-7);

        let two = map_with(&[((0, 0), 0.8), ((5, 5), 0.6), ((6, 5), 0.6), ((7, 5), 0.6)]);
        let v = pce(&[block(0, 0, 1, 1), block(5, 5, 3, 1)], &two).unwrap().value;
        assert!((v - 0.7).abs() < 1e-7);

        let none = pce(&[], &full).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.no_detection);
    }

    #[test]
    fn pce_rejects_mismatched_objects() {
        let map = ProbabilityMap::background(20, 20, 2);
        let off = ObjectMask::from_pixels(30, 30, [(25, 25)]).with_class(1);
        assert!(matches!(pce(&[off], &map), Err(Error::Dimension(_))));
        assert!(matches!(pce(&[block(0, 0, 1, 1).with_class(4)], &map), Err(Error::Range(_))));
    }

    #[test]
    fn pce_equals_mean_of_stored_confidences() {
        let map = map_with(&[((0, 0), 0.9), ((1, 0), 0.5), ((9, 9), 0.75)]);
        let objs = vec![
            block(0, 0, 2, 1).with_confidence(Some(0.7)),
            block(9, 9, 1, 1).with_confidence(Some(0.75)),
        ];
        let a = pce(&objs, &map).unwrap().value;
        let b = pce_from_confidences(&objs).value;
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn dov_examples() {
        assert_eq!(dov(&[3, 3, 3]).unwrap().value, 0.0);
        assert_eq!(dov(&[1, 2, 3]).unwrap().value, 1.0);
        assert_eq!(dov(&[0, 5, 10]).unwrap().value, 25.0);
        assert!(!dov(&[1, 2]).unwrap().higher_is_better);
        assert!(dov(&[1]).is_err());
    }

    #[test]
    fn dap_examples() {
        let member = vec![block(0, 0, 5, 5), block(10, 10, 5, 5)];
        let e = PredictionEnsemble::new("p", vec![member; DEFAULT_ENSEMBLE_SIZE]).unwrap();
        assert_eq!(dap(&e).unwrap().value, 1.0);

        let e = PredictionEnsemble::new("p", vec![vec![block(0, 0, 5, 5)], vec![block(10, 10, 5, 5)]]).unwrap();
        assert_eq!(dap(&e).unwrap().value, 0.0);

        assert!(PredictionEnsemble::new("p", vec![vec![]]).is_err());
    }

    #[test]
    fn dap_of_two_is_mean_of_both_directions() {
        let p1 = vec![block(0, 0, 10, 10).with_confidence(Some(0.9))];
        let p2 = vec![
            block(0, 0, 10, 8).with_confidence(Some(0.8)),
            block(12, 12, 4, 4).with_confidence(Some(0.6)),
        ];
        let t = default_thresholds();
        let a = map_over_thresholds(&p1, &p2, &t).unwrap().map_range;
        let b = map_over_thresholds(&p2, &p1, &t).unwrap().map_range;
        assert_ne!(a, b);
        let e = PredictionEnsemble::new("p", vec![p1, p2]).unwrap();
        assert!((dap(&e).unwrap().value - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn defaults() {
        assert_eq!(DEFAULT_ENSEMBLE_SIZE, 10);
        assert_eq!(DEFAULT_BINS, 10);
    }

    proptest! {
        #[test]
        fn dov_shift_and_scale(counts in prop::collection::vec(0usize..50, 2..12), k in 0usize..20, s in 1usize..5) {
            let base = dov(&counts).unwrap().value;
            let shifted: Vec<usize> = counts.iter().map(|c| c + k).collect();
            let scaled: Vec<usize> = counts.iter().map(|c| c * s).collect();
            prop_assert!((dov(&shifted).unwrap().value - base).abs() <= 1e-9 * (1.0 + base));
            prop_assert!((dov(&scaled).unwrap().value - base * (s * s) as f64).abs() <= 1e-9 * (1.0 + base * (s * s) as f64));
        }

        #[test]
        fn dap_in_unit_interval(boxes in prop::collection::vec(prop::collection::vec((0u32..15, 0u32..15, 1u32..6, 1u32..6), 0..3), 2..4)) {
            let members = boxes.iter()
                .map(|m| m.iter().map(|&(x, y, w, h)| block(x, y, w, h)).collect())
                .collect();
            let v = dap(&PredictionEnsemble::new("p", members).unwrap()).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
