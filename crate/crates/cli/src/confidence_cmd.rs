use anyhow::{anyhow, bail, Context};
use docdet_core::confidence::{
    dap, dov_ensemble, object_features, pce as pce_score, pce_from_confidences, ConfidenceScore, Estimator,
    ForestParams, PredictionEnsemble, RegressionForest, FEATURE_COUNT,
};
use docdet_core::data_model::{load_probmap, DatasetManifest, ManifestEntry};
use docdet_core::object_metrics::{default_thresholds, match_image};
use docdet_core::raster::page_masks;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{EnsembleArgs, PceArgs, RfrPredictArgs, RfrTrainArgs};
use crate::dataset;
use crate::report::{Output, Report};
use crate::usage;

/// One line of `confidence` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub estimator: String,
    pub value: f64,
    pub orientation: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_detection: bool,
}

impl ScoreRecord {
    fn new(image_id: &str, estimator: Estimator, score: ConfidenceScore) -> Self {
        ScoreRecord {
            image_id: image_id.to_string(),
            estimator: estimator.name().to_string(),
            value: score.value,
            orientation: orientation(score.higher_is_better).to_string(),
            no_detection: score.no_detection,
        }
    }
}

pub fn orientation(higher_is_better: bool) -> &'static str {
    if higher_is_better {
        "higher_is_better"
    } else {
        "lower_is_better"
    }
}

/// How to score one image.
pub enum Scorer {
    Pce,
    Ensemble { size: usize, dap: bool },
    Forest(RegressionForest),
}

impl Scorer {
    pub fn estimator(&self) -> Estimator {
        match self {
            Scorer::Pce => Estimator::Pce,
            Scorer::Ensemble { dap: true, .. } => Estimator::Dap,
            Scorer::Ensemble { dap: false, .. } => Estimator::Dov,
            Scorer::Forest(_) => Estimator::MapRfr,
        }
    }

    fn score(&self, entry: &ManifestEntry, warnings: &mut Vec<String>) -> anyhow::Result<ConfidenceScore> {
        let id = &entry.image_id;
        match self {
            Scorer::Pce => {
                let pred = dataset::page(&entry.pred_path, id, warnings)?;
                let masks = page_masks(&pred);
                match &entry.probmap_path {
                    Some(path) => {
                        let map = load_probmap(path).with_context(|| format!("{id}: loading {}", path.display()))?;
                        Ok(pce_score(&masks, &map).map_err(|e| anyhow!("{id}: {e}"))?)
                    }
                    None => {
                        warnings.push(format!("{id}: no probability map; using stored object confidences"));
                        Ok(pce_from_confidences(&masks))
                    }
                }
            }
            Scorer::Ensemble { size, dap: use_dap } => {
                let paths = entry.ensemble_paths.as_deref().unwrap_or_default();
                if paths.len() < *size {
                    bail!("{id}: ensemble lists {} member(s), {size} requested", paths.len());
                }
                let members = paths[..*size]
                    .iter()
                    .map(|p| dataset::page(p, id, warnings).map(|page| page_masks(&page)))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let ensemble = PredictionEnsemble::new(id.clone(), members).map_err(|e| anyhow!("{id}: {e}"))?;
                let score = if *use_dap { dap(&ensemble) } else { dov_ensemble(&ensemble) };
                Ok(score.map_err(|e| anyhow!("{id}: {e}"))?)
            }
            Scorer::Forest(forest) => {
                let pred = dataset::page(&entry.pred_path, id, warnings)?;
                let bins = forest.n_features / FEATURE_COUNT;
                let x = object_features(&page_masks(&pred), pred.width, pred.height, bins)?;
                Ok(ConfidenceScore::new(forest.predict(&x)?, true))
            }
        }
    }

    /// Scores of the given entries, in order.
    pub fn score_entries(&self, entries: &[&ManifestEntry]) -> anyhow::Result<(Vec<ScoreRecord>, Vec<String>)> {
        let estimator = self.estimator();
        let scored = entries
            .par_iter()
            .map(|e| {
                let mut w = Vec::new();
                let s = self.score(e, &mut w)?;
                Ok((ScoreRecord::new(&e.image_id, estimator, s), w))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let mut warnings = Vec::new();
        let records = scored
            .into_iter()
            .map(|(r, w)| {
                warnings.extend(w);
                r
            })
            .collect();
        Ok((records, warnings))
    }
}

fn emit(manifest: &DatasetManifest, scorer: &Scorer, out: &Output) -> anyhow::Result<()> {
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let (records, warnings) = scorer.score_entries(&entries)?;
    let mean = if records.is_empty() {
        f64::NAN
    } else {
        records.iter().map(|r| r.value).sum::<f64>() / records.len() as f64
    };
    eprintln!(
        "{}: scored {} images, mean {mean:.4}",
        scorer.estimator().name(),
        records.len()
    );
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    out.lines(&records)
}

pub fn pce(a: &PceArgs, out: &Output) -> anyhow::Result<()> {
    emit(&dataset::manifest(&a.manifest)?, &Scorer::Pce, out)
}

pub fn ensemble(a: &EnsembleArgs, use_dap: bool, out: &Output) -> anyhow::Result<()> {
    if a.ensemble_size < 2 {
        return Err(usage("--ensemble-size must be at least 2"));
    }
    let scorer = Scorer::Ensemble {
        size: a.ensemble_size,
        dap: use_dap,
    };
    emit(&dataset::manifest(&a.manifest)?, &scorer, out)
}

#[derive(Debug, Serialize)]
struct TrainConfig {
    seed: u64,
    bins: usize,
    params: ForestParams,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    n_train: usize,
    n_features: usize,
    target_mean: f64,
    target_variance: f64,
    train_mse: f64,
}

pub fn rfr_train(a: &RfrTrainArgs, out: &Output) -> anyhow::Result<()> {
    let params = ForestParams {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_samples_split: a.min_samples_split,
        min_samples_leaf: a.min_samples_leaf,
        bootstrap: !a.no_bootstrap,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let manifest = dataset::manifest(&a.manifest)?;
    let (pairs, warnings) = dataset::pairs(&manifest)?;
    if pairs.is_empty() {
        bail!("no training images");
    }
    let thresholds = default_thresholds();
    let rows = pairs
        .par_iter()
        .map(|p| {
            let pred = page_masks(&p.pred);
            let target = match_image(&pred, &page_masks(&p.gt), &thresholds)?.map();
            Ok((object_features(&pred, p.pred.width, p.pred.height, a.bins)?, target))
        })
        .collect::<docdet_core::Result<Vec<_>>>()?;
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = rows.into_iter().unzip();
    let forest = RegressionForest::train(&x, &y, &params, a.seed)?;
    forest.save(&a.model)?;

    let n = y.len() as f64;
    let target_mean = y.iter().sum::<f64>() / n;
    let target_variance = y.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / n;
    let train_mse = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| Ok((forest.predict(xi)? - yi).powi(2)))
        .sum::<docdet_core::Result<f64>>()?
        / n;
    let mut report = Report::new(
        "confidence rfr-train",
        TrainConfig {
            seed: a.seed,
            bins: a.bins,
            params,
        },
    )?;
    report.input("manifest", &a.manifest)?;
    report.warnings = warnings;
    report.section(
        "training",
        TrainSummary {
            n_train: y.len(),
            n_features: forest.n_features,
            target_mean,
            target_variance,
            train_mse,
        },
    )?;
    report.summarize(&format!(
        "trained {} trees on {} images, training MSE {train_mse:.5}",
        forest.trees.len(),
        y.len()
    ));
    out.json(&report)
}

pub fn rfr_predict(a: &RfrPredictArgs, out: &Output) -> anyhow::Result<()> {
    let forest = RegressionForest::load(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    if forest.n_features % FEATURE_COUNT != 0 {
        bail!("model expects {} features, not a multiple of {FEATURE_COUNT}", forest.n_features);
    }
    emit(&dataset::manifest(&a.manifest)?, &Scorer::Forest(forest), out)
}
