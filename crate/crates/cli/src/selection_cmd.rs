use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use docdet_core::confidence::{Estimator, RegressionForest, DEFAULT_ENSEMBLE_SIZE};
use docdet_core::data_model::ManifestEntry;
use docdet_core::rng::substream;
use docdet_core::selection::{
    al_run as run_loop, default_sweep, load_ledger, rejection_curve, rejection_curve_with_bands,
    replay_ledger, select_images, AlConfig, Amount, LOWER_PERCENTILE, UPPER_PERCENTILE,
};
use serde::{Deserialize, Serialize};

use crate::args::{AlRunArgs, RejectArgs, SelectArgs};
use crate::confidence_cmd::{ScoreRecord, Scorer};
use crate::dataset;
use crate::report::{Output, Report};
use crate::usage;

/// Scores from a `confidence` output file and their common orientation.
fn read_scores(path: &Path) -> anyhow::Result<(Vec<(String, f64)>, bool)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut orientation: Option<String> = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ScoreRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), n + 1))?;
        match &orientation {
            Some(o) if *o != r.orientation => bail!("{}: mixed score orientations", path.display()),
            Some(_) => {}
            None => orientation = Some(r.orientation.clone()),
        }
        if !r.value.is_finite() {
            bail!("{}: non-finite score for {:?}", path.display(), r.image_id);
        }
        rows.push((r.image_id, r.value));
    }
    let higher_is_better = match orientation.as_deref() {
        Some("higher_is_better") => true,
        Some("lower_is_better") => false,
        Some(other) => bail!("{}: unknown orientation {other:?}", path.display()),
        None => bail!("{}: no scores", path.display()),
    };
    let mut ids: Vec<&String> = rows.iter().map(|r| &r.0).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("{}: duplicate image_id {:?}", path.display(), w[0]);
    }
    Ok((rows, higher_is_better))
}

/// Comma list of values or `start:stop:step` (inclusive, either direction).
fn parse_sweep(text: &str) -> anyhow::Result<Vec<f64>> {
    let bad = || usage(format!("--thresholds: cannot parse {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, s): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if !(s > 0.0) || !a.is_finite() || !b.is_finite() {
                return Err(bad());
            }
            let n = ((b - a).abs() / s + 1e-9).floor() as usize;
            let dir = if b >= a { 1.0 } else { -1.0 };
            (0..=n).map(|k| a + dir * s * k as f64).collect()
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<anyhow::Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

#[derive(Debug, Serialize)]
struct RejectConfig<'a> {
    higher_is_better: bool,
    metric_key: &'a str,
    thresholds: &'a [f64],
    bootstrap_resamples: Option<usize>,
    percentiles: Option<[f64; 2]>,
    seed: u64,
}

pub fn reject_curve(a: &RejectArgs, out: &Output) -> anyhow::Result<()> {
    if a.bootstrap.is_some_and(|n| n < 2) {
        return Err(usage("--bootstrap needs at least 2 resamples"));
    }
    let explicit = a.thresholds.as_deref().map(parse_sweep).transpose()?;
    let (scores, higher_is_better) = read_scores(&a.scores)?;
    let metrics: BTreeMap<String, f64> = dataset::read_values(&a.metrics, &a.metric_key)?.into_iter().collect();
    let mut warnings = Vec::new();
    let mut s = Vec::with_capacity(scores.len());
    let mut m = Vec::with_capacity(scores.len());
    for (id, value) in &scores {
        let metric = metrics
            .get(id)
            .ok_or_else(|| anyhow!("no {:?} metric for {id:?}", a.metric_key))?;
        s.push(*value);
        m.push(*metric);
    }
    let extra = metrics.len() - scores.len().min(metrics.len());
    if metrics.len() > scores.len() {
        warnings.push(format!("{extra} metric row(s) have no score and were ignored"));
    }
    let thresholds = explicit.unwrap_or_else(|| default_sweep(higher_is_better));
    let curve = match a.bootstrap {
        Some(n) => rejection_curve_with_bands(&s, higher_is_better, &m, &thresholds, n, a.seed)?,
        None => rejection_curve(&s, higher_is_better, &m, &thresholds)?,
    };
    let mut report = Report::new(
        "reject-curve",
        RejectConfig {
            higher_is_better,
            metric_key: &a.metric_key,
            thresholds: &thresholds,
            bootstrap_resamples: a.bootstrap,
            percentiles: a.bootstrap.map(|_| [LOWER_PERCENTILE, UPPER_PERCENTILE]),
            seed: a.seed,
        },
    )?;
    report.input("scores", &a.scores)?;
    report.input("metrics", &a.metrics)?;
    report.warnings = warnings;
    report.summarize(&format!(
        "rejection curve over {} images: {} points",
        s.len(),
        curve.points.len()
    ));
    report.section("rejection_curve", curve)?;
    out.json(&report)
}

pub fn select(a: &SelectArgs, out: &Output) -> anyhow::Result<()> {
    let (pool, higher_is_better) = read_scores(&a.scores)?;
    let amount = match (a.threshold, a.budget) {
        (Some(t), None) if t.is_finite() => Amount::Threshold(t),
        (None, Some(k)) => Amount::Budget(k),
        _ => return Err(usage("give exactly one finite --threshold or a --budget")),
    };
    let mut rng = substream(a.seed, "select");
    let outcome = select_images(&pool, higher_is_better, a.strategy.into(), amount, &mut rng)?;
    eprintln!(
        "selected {} of {} images for {:?}",
        outcome.selected.len(),
        pool.len(),
        outcome.annotation_mode
    );
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    out.json(&outcome)
}

/// `al-run` configuration file: the loop settings plus the data and estimator.
#[derive(Debug, Deserialize)]
struct AlRunFile {
    #[serde(flatten)]
    config: AlConfig,
    /// Dataset whose predictions are scored; re-read at every iteration.
    manifest: PathBuf,
    estimator: Estimator,
    /// Trained forest, for the `map-rfr` estimator.
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default)]
    ensemble_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct IterationRow {
    iteration: usize,
    pool_size: usize,
    threshold: Option<f64>,
    selected: usize,
    cumulative_budget: usize,
}

fn scorer_for(file: &AlRunFile, base: &Path) -> anyhow::Result<Scorer> {
    Ok(match file.estimator {
        Estimator::Pce => Scorer::Pce,
        Estimator::Dap | Estimator::Dov => Scorer::Ensemble {
            size: file.ensemble_size.unwrap_or(DEFAULT_ENSEMBLE_SIZE),
            dap: file.estimator == Estimator::Dap,
        },
        Estimator::MapRfr => {
            let model = file
                .model
                .as_ref()
                .ok_or_else(|| usage("the map-rfr estimator needs a \"model\" path"))?;
            let path = base.join(model);
            Scorer::Forest(
                RegressionForest::load(&path).with_context(|| format!("loading model {}", path.display()))?,
            )
        }
    })
}

pub fn al_run(a: &AlRunArgs, out: &Output) -> anyhow::Result<()> {
    if let Some(ledger) = &a.replay {
        let (header, entries) = load_ledger(ledger)?;
        let replay = replay_ledger(&header, &entries)?;
        eprintln!(
            "replayed {} iterations, {} images selected: {}",
            replay.iterations,
            replay.total_selected,
            if replay.identical { "identical" } else { "MISMATCH" }
        );
        for m in &replay.mismatches {
            eprintln!("mismatch: {m}");
        }
        out.json(&replay)?;
        if !replay.identical {
            bail!("ledger replay does not match");
        }
        return Ok(());
    }
    let (Some(config_path), Some(out_dir)) = (&a.config, &a.out_dir) else {
        return Err(usage("al-run needs --config and --out-dir, or --replay"));
    };
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let file: AlRunFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    file.config.validate().map_err(|e| usage(e.to_string()))?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let manifest_path = base.join(&file.manifest);
    let scorer = scorer_for(&file, base)?;
    let initial: Vec<String> = dataset::manifest(&manifest_path)?
        .entries
        .into_iter()
        .map(|e| e.image_id)
        .collect();
    let estimator = scorer.estimator();
    let entries = run_loop(
        &file.config,
        &initial,
        estimator.higher_is_better(),
        out_dir,
        |iteration, pool| {
            let manifest = dataset::manifest(&manifest_path).map_err(|e| to_core(&e))?;
            let by_id: BTreeMap<&str, &ManifestEntry> =
                manifest.entries.iter().map(|e| (e.image_id.as_str(), e)).collect();
            let selected = pool
                .iter()
                .map(|id| {
                    by_id.get(id.as_str()).copied().ok_or_else(|| {
                        docdet_core::Error::Validation(format!("{id:?} left the manifest"))
                    })
                })
                .collect::<docdet_core::Result<Vec<_>>>()?;
            let (records, warnings) = scorer.score_entries(&selected).map_err(|e| to_core(&e))?;
            for w in warnings {
                eprintln!("warning: iteration {iteration}: {w}");
            }
            Ok(records.into_iter().map(|r| r.value).collect())
        },
    )?;
    let rows: Vec<IterationRow> = entries
        .iter()
        .map(|e| IterationRow {
            iteration: e.iteration,
            pool_size: e.pool_size,
            threshold: e.threshold,
            selected: e.selected.len(),
            cumulative_budget: e.cumulative_budget,
        })
        .collect();
    let total = entries.last().map_or(0, |e| e.cumulative_budget);
    eprintln!(
        "{} iterations with {}, {total} images selected",
        rows.len(),
        estimator.name()
    );
    out.json(&serde_json::json!({
        "estimator": estimator.name(),
        "iterations": rows,
        "total_selected": total,
    }))
}

fn to_core(e: &anyhow::Error) -> docdet_core::Error {
    docdet_core::Error::External(format!("{e:#}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweeps_parse_both_directions() {
        assert_eq!(parse_sweep("10:0:5").unwrap(), vec![10.0, 5.0, 0.0]);
        assert_eq!(parse_sweep("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_sweep("0.2, 0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_sweep("a:b").is_err());
        assert!(parse_sweep("0:1:0").is_err());
    }
}
