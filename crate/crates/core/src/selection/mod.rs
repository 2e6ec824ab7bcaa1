//! Rejection curves, bootstrap bands and active-learning selection.

mod active;
mod rejection;

pub use active::{
    al_run, load_ledger, replay_ledger, AlConfig, LedgerEntry, LedgerHeader, LedgerRecord,
    ReplayReport, Schedule, ScoredImage,
};
pub use rejection::{
    bootstrap_bands, default_sweep, percentile, rejection_curve, rejection_curve_with_bands,
    BandPoint, RejectionCurve, RejectionPoint, DEFAULT_RESAMPLES, LOWER_PERCENTILE,
    UPPER_PERCENTILE,
};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Least confident images, queued for manual annotation.
    Lowest,
    /// Most confident images, whose predictions become labels.
    Highest,
    /// Uniform sample, queued for manual annotation.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    Manual,
    AutoLabel,
}

impl Strategy {
    pub fn annotation_mode(self) -> AnnotationMode {
        match self {
            Strategy::Highest => AnnotationMode::AutoLabel,
            Strategy::Lowest | Strategy::Random => AnnotationMode::Manual,
        }
    }
}

/// How many images one selection takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amount {
    /// Threshold on the raw score.
    Threshold(f64),
    Budget(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub strategy: Strategy,
    pub annotation_mode: AnnotationMode,
    pub threshold: Option<f64>,
    pub selected: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Confidence on a higher-is-better scale.
fn confidence(score: f64, higher_is_better: bool) -> f64 {
    if higher_is_better {
        score
    } else {
        -score
    }
}

/// True when the image falls on the low-confidence side of `threshold`.
pub fn below_threshold(score: f64, threshold: f64, higher_is_better: bool) -> bool {
    confidence(score, higher_is_better) < confidence(threshold, higher_is_better)
}

/// Picks images from a scored pool.
///
/// With a threshold, `Lowest` takes images strictly on the low-confidence side
/// and `Highest` the rest, so the two partition the pool; `Random` draws as
/// many images as `Lowest` would. With a budget the `k` least or most
/// confident images are taken, ties broken by image id.
pub fn select_images<R: Rng>(
    pool: &[(String, f64)],
    higher_is_better: bool,
    strategy: Strategy,
    amount: Amount,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    if pool.is_empty() {
        return Err(Error::Validation("selection from an empty pool".into()));
    }
    if let Some((id, _)) = pool.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Validation(format!("non-finite score for {id:?}")));
    }
    let mut warnings = Vec::new();
    let mut by_confidence: Vec<&(String, f64)> = pool.iter().collect();
    by_confidence.sort_by(|a, b| {
        confidence(a.1, higher_is_better)
            .total_cmp(&confidence(b.1, higher_is_better))
            .then_with(|| a.0.cmp(&b.0))
    });
    let count = match amount {
        Amount::Budget(k) => {
            if k > pool.len() {
                warnings.push(format!(
                    "budget {k} exceeds pool size {}; selecting the whole pool",
                    pool.len()
                ));
            }
            k.min(pool.len())
        }
        Amount::Threshold(t) => pool
            .iter()
            .filter(|(_, s)| below_threshold(*s, t, higher_is_better))
            .count(),
    };
    let selected: Vec<String> = match (strategy, amount) {
        (Strategy::Lowest, _) => by_confidence[..count].iter().map(|p| p.0.clone()).collect(),
        (Strategy::Highest, Amount::Budget(_)) => by_confidence
            .iter()
            .rev()
            .take(count)
            .map(|p| p.0.clone())
            .collect(),
        (Strategy::Highest, Amount::Threshold(_)) => by_confidence[count..]
            .iter()
            .rev()
            .map(|p| p.0.clone())
            .collect(),
        (Strategy::Random, _) => {
            let mut ids: Vec<&String> = pool.iter().map(|p| &p.0).collect();
            ids.sort();
            sample(rng, ids.len(), count)
                .into_iter()
                .map(|i| ids[i].clone())
                .collect()
        }
    };
    Ok(SelectionOutcome {
        strategy,
        annotation_mode: strategy.annotation_mode(),
        threshold: match amount {
            Amount::Threshold(t) => Some(t),
            Amount::Budget(_) => None,
        },
        selected,
        warnings,
    })
}
