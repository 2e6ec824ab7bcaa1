//! Rejection curves and their bootstrap bands.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 100;
pub const LOWER_PERCENTILE: f64 = 10.0;
pub const UPPER_PERCENTILE: f64 = 90.0;

/// 0, 0.05, ..., 1 for higher-is-better scores; 10, 9, ..., 0 otherwise.
pub fn default_sweep(higher_is_better: bool) -> Vec<f64> {
    if higher_is_better {
        (0..=20).map(|k| k as f64 / 20.0).collect()
    } else {
        (0..=10).rev().map(f64::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub threshold: f64,
    pub rejection_rate: f64,
    pub retained: usize,
    /// Mean per-image metric of the retained images.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub threshold: f64,
    /// Absent when no resample retained an image.
    pub median: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Resamples that retained at least one image at this threshold.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub higher_is_better: bool,
    pub points: Vec<RejectionPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandPoint>>,
}

fn keeps(score: f64, threshold: f64, higher_is_better: bool) -> bool {
    if higher_is_better {
        score >= threshold
    } else {
        score <= threshold
    }
}

/// Orders thresholds from loosest to strictest.
fn sweep_order(thresholds: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut t = thresholds.to_vec();
    t.sort_by(|a, b| if higher_is_better { a.total_cmp(b) } else { b.total_cmp(a) });
    t.dedup();
    t
}

/// (retained count, mean metric) at one threshold; `None` when nothing is kept.
fn retained_mean(
    sample: impl Iterator<Item = (f64, f64)>,
    threshold: f64,
    higher_is_better: bool,
) -> Option<(usize, f64)> {
    let (mut n, mut sum) = (0usize, 0.0);
    for (s, m) in sample {
        if keeps(s, threshold, higher_is_better) {
            n += 1;
            sum += m;
        }
    }
    (n > 0).then(|| (n, sum / n as f64))
}

fn check_inputs(scores: &[f64], metrics: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Validation("rejection curve over zero images".into()));
    }
    if scores.len() != metrics.len() {
        return Err(Error::Length {
            expected: scores.len() as u64,
            actual: metrics.len() as u64,
        });
    }
    if scores.iter().chain(metrics).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite score or metric".into()));
    }
    Ok(())
}

/// Metric of the retained images as low-confidence images are rejected.
///
/// Thresholds are swept from loosest to strictest. Thresholds that retain
/// nothing are omitted, and consecutive thresholds with the same rejection
/// rate collapse into the first of them.
pub fn rejection_curve(
    scores: &[f64],
    higher_is_better: bool,
    metrics: &[f64],
    thresholds: &[f64],
) -> Result<RejectionCurve> {
    check_inputs(scores, metrics)?;
    let n = scores.len();
    let mut points: Vec<RejectionPoint> = Vec::new();
    for t in sweep_order(thresholds, higher_is_better) {
        let Some((retained, metric)) =
            retained_mean(scores.iter().copied().zip(metrics.iter().copied()), t, higher_is_better)
        else {
            continue;
        };
        if points.last().is_some_and(|p| p.retained == retained) {
            continue;
        }
        points.push(RejectionPoint {
            threshold: t,
            rejection_rate: (n - retained) as f64 / n as f64,
            retained,
            metric,
        });
    }
    Ok(RejectionCurve {
        higher_is_better,
        points,
        bands: None,
    })
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Median and percentile bands of the retained metric over bootstrap
/// resamples of the image set, at each of `thresholds`.
pub fn bootstrap_bands(
    scores: &[f64],
    higher_is_better: bool,
    metrics: &[f64],
    thresholds: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<Vec<BandPoint>> {
    check_inputs(scores, metrics)?;
    if resamples < 2 {
        return Err(Error::Config("bootstrap needs at least 2 resamples".into()));
    }
    let n = scores.len();
    let mut rng = substream(seed, "bootstrap");
    let draws: Vec<Vec<usize>> = (0..resamples)
        .map(|_| (0..n).map(|_| rng.gen_range(0..n)).collect())
        .collect();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let mut values: Vec<f64> = draws
                .iter()
                .filter_map(|d| {
                    retained_mean(d.iter().map(|&i| (scores[i], metrics[i])), t, higher_is_better)
                        .map(|(_, m)| m)
                })
                .collect();
            values.sort_by(f64::total_cmp);
            let pick = |p: f64| (!values.is_empty()).then(|| percentile(&values, p));
            BandPoint {
                threshold: t,
                median: pick(50.0),
                lower: pick(LOWER_PERCENTILE),
                upper: pick(UPPER_PERCENTILE),
                samples: values.len(),
            }
        })
        .collect())
}

/// Curve plus bands at the curve's thresholds.
pub fn rejection_curve_with_bands(
    scores: &[f64],
    higher_is_better: bool,
    metrics: &[f64],
    thresholds: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<RejectionCurve> {
    let mut curve = rejection_curve(scores, higher_is_better, metrics, thresholds)?;
    let at: Vec<f64> = curve.points.iter().map(|p| p.threshold).collect();
    curve.bands = Some(bootstrap_bands(scores, higher_is_better, metrics, &at, resamples, seed)?);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sweeps() {
        let up = default_sweep(true);
        assert_eq!((up.len(), up[1], up[20]), (21, 0.05, 1.0));
        let down = default_sweep(false);
        assert_eq!((down[0], down[10]), (10.0, 0.0));
        assert_eq!(DEFAULT_RESAMPLES, 100);
        assert_eq!((LOWER_PERCENTILE, UPPER_PERCENTILE), (10.0, 90.0));
    }

    #[test]
    fn loosest_threshold_gives_overall_mean() {
        let c = rejection_curve(&[0.2, 0.5, 0.9], true, &[0.1, 0.4, 0.7], &default_sweep(true)).unwrap();
        assert_eq!(c.points[0].rejection_rate, 0.0);
        assert!((c.points[0].metric - 0.4).abs() < 1e-15);
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.points[2].metric, 0.7);
    }

    #[test]
    fn constant_scores_give_one_point() {
        let c = rejection_curve(&[0.5; 4], true, &[0.1, 0.2, 0.3, 0.4], &default_sweep(true)).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].rejection_rate, 0.0);
    }

    #[test]
    fn lower_is_better_rejects_high_scores() {
        let c = rejection_curve(&[0.0, 4.0, 9.0], false, &[0.9, 0.5, 0.1], &default_sweep(false)).unwrap();
        let rates: Vec<f64> = c.points.iter().map(|p| p.rejection_rate).collect();
        assert_eq!(rates, vec![0.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(c.points[2].metric, 0.9);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(rejection_curve(&[], true, &[], &[0.5]).is_err());
        assert!(rejection_curve(&[0.1], true, &[], &[0.5]).is_err());
    }

    #[test]
    fn identical_images_give_zero_width_bands() {
        let b = bootstrap_bands(&[0.5; 5], true, &[0.3; 5], &[0.0, 0.5], 100, 1).unwrap();
        assert!(b.iter().all(|p| p.lower == p.upper && p.median == Some(0.3) && p.samples == 100));
    }

    #[test]
    fn seeded_bands_repeat() {
        let s = [0.1, 0.4, 0.6, 0.9];
        let m = [0.2, 0.3, 0.8, 0.7];
        let t = default_sweep(true);
        let a = bootstrap_bands(&s, true, &m, &t, 100, 7).unwrap();
        assert_eq!(a, bootstrap_bands(&s, true, &m, &t, 100, 7).unwrap());
        assert_eq!(a.last().unwrap().median, None);
    }

    #[test]
    fn two_image_bands_are_achievable_means() {
        // Resample multisets {a,a}, {a,b}, {b,b} have means 0.2, 0.5, 0.8.
        let b = bootstrap_bands(&[0.5, 0.5], true, &[0.2, 0.8], &[0.0], 100, 3).unwrap();
        let achievable = [0.2, 0.5, 0.8];
        for v in [b[0].median, b[0].lower, b[0].upper] {
            assert!(achievable.contains(&v.unwrap()), "{v:?}");
        }
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 10.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 5.0);
        assert_eq!(percentile(&v, 90.0), 9.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }

    proptest! {
        #[test]
        fn oracle_scores_give_monotone_curve(metrics in prop::collection::vec(0.0f64..=1.0, 1..60)) {
            let c = rejection_curve(&metrics, true, &metrics, &default_sweep(true)).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].rejection_rate < w[1].rejection_rate);
                prop_assert!(w[0].metric <= w[1].metric);
            }
        }
    }
}
