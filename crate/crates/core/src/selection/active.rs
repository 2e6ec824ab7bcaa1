//! Active-learning loop with an append-only JSON-lines ledger.
//!
//! Each iteration scores the remaining pool, selects images, writes a
//! selection manifest, optionally runs an external trainer command, removes
//! the selection from the pool and appends one ledger line. The ledger holds
//! every score used, so the selection sequence can be replayed without the
//! scorer.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{select_images, Amount, AnnotationMode, SelectionOutcome, Strategy};
use crate::rng::substream;
use crate::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.jsonl";

/// Per-iteration selection size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Fixed threshold on the raw score.
    Threshold(f64),
    /// Threshold at this quantile of the current pool's confidences.
    Quantile(f64),
    /// Fixed number of images.
    Budget(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlConfig {
    pub strategy: Strategy,
    pub schedule: Schedule,
    pub max_iterations: usize,
    /// Cap on the number of images selected over the whole run.
    #[serde(default)]
    pub total_budget: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Shell command run after each selection; `{manifest}` and `{iteration}`
    /// are substituted.
    #[serde(default)]
    pub trainer_command: Option<String>,
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        match self.schedule {
            Schedule::Threshold(t) if !t.is_finite() => {
                Err(Error::Config("schedule threshold must be finite".into()))
            }
            Schedule::Quantile(q) if !(0.0..=1.0).contains(&q) => {
                Err(Error::Config(format!("quantile {q} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub config: AlConfig,
    pub higher_is_better: bool,
    pub initial_pool: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub pool_size: usize,
    /// Scores of the pool at this iteration, in pool order.
    pub scores: Vec<ScoredImage>,
    pub threshold: Option<f64>,
    pub selected: Vec<String>,
    pub annotation_mode: AnnotationMode,
    pub budget_consumed: usize,
    pub cumulative_budget: usize,
    pub selection_manifest: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LedgerRecord {
    Header(LedgerHeader),
    Iteration(LedgerEntry),
}

/// Raw threshold whose low-confidence side holds `round(q * n)` images
/// (fewer on ties).
fn quantile_threshold(scored: &[(String, f64)], q: f64, higher_is_better: bool) -> f64 {
    let sign = if higher_is_better { 1.0 } else { -1.0 };
    let mut keys: Vec<f64> = scored.iter().map(|(_, s)| sign * s).collect();
    keys.sort_by(f64::total_cmp);
    let k = (q * keys.len() as f64).round() as usize;
    let key = if k >= keys.len() {
        keys[keys.len() - 1] + 1.0
    } else {
        keys[k]
    };
    sign * key
}

/// One selection, shared by the live run and the replay.
fn select_step(
    config: &AlConfig,
    higher_is_better: bool,
    iteration: usize,
    scored: &[(String, f64)],
    cumulative: usize,
) -> Result<SelectionOutcome> {
    let amount = match config.schedule {
        Schedule::Threshold(t) => Amount::Threshold(t),
        Schedule::Quantile(q) => Amount::Threshold(quantile_threshold(scored, q, higher_is_better)),
        Schedule::Budget(k) => Amount::Budget(k),
    };
    let mut rng = substream(config.seed, &format!("al-iteration-{iteration}"));
    let mut outcome = select_images(scored, higher_is_better, config.strategy, amount, &mut rng)?;
    if let Some(total) = config.total_budget {
        let remaining = total.saturating_sub(cumulative);
        if outcome.selected.len() > remaining {
            outcome.warnings.push(format!(
                "selection of {} truncated to the remaining budget {remaining}",
                outcome.selected.len()
            ));
            outcome.selected.truncate(remaining);
        }
    }
    Ok(outcome)
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn append(file: &mut File, path: &Path, record: &LedgerRecord) -> Result<()> {
    let line = serde_json::to_string(record).expect("ledger record serializes");
    writeln!(file, "{line}")
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_selection(path: &Path, iteration: usize, outcome: &SelectionOutcome) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        image_id: &'a str,
        iteration: usize,
        annotation_mode: AnnotationMode,
    }
    let mut text = String::new();
    for id in &outcome.selected {
        let line = Line {
            image_id: id,
            iteration,
            annotation_mode: outcome.annotation_mode,
        };
        text.push_str(&serde_json::to_string(&line).expect("selection line serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_trainer(template: &str, manifest: &Path, iteration: usize) -> Result<()> {
    let cmd = template
        .replace("{manifest}", &shell_quote(&manifest.to_string_lossy()))
        .replace("{iteration}", &iteration.to_string());
    log::info!("iteration {iteration}: running trainer: {cmd}");
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .status()
        .map_err(|e| Error::External(format!("cannot start trainer {cmd:?}: {e}")))?;
    if !status.success() {
        return Err(Error::External(format!(
            "trainer exited with {status} at iteration {iteration}"
        )));
    }
    Ok(())
}

/// Runs the loop, writing `ledger.jsonl` and one `selection-NNN.jsonl` per
/// iteration into `out_dir`.
///
/// `scorer(iteration, pool)` returns one score per pool image. A failing
/// trainer command stops the run; ledger lines already written stay valid.
pub fn al_run<S>(
    config: &AlConfig,
    initial_pool: &[String],
    higher_is_better: bool,
    out_dir: &Path,
    mut scorer: S,
) -> Result<Vec<LedgerEntry>>
where
    S: FnMut(usize, &[String]) -> Result<Vec<f64>>,
{
    config.validate()?;
    let unique: BTreeSet<&String> = initial_pool.iter().collect();
    if unique.len() != initial_pool.len() {
        return Err(Error::Validation("duplicate image id in the pool".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ledger_path = out_dir.join(LEDGER_FILE);
    let mut ledger = File::create(&ledger_path).map_err(|e| Error::io(&ledger_path, e))?;
    append(
        &mut ledger,
        &ledger_path,
        &LedgerRecord::Header(LedgerHeader {
            config: config.clone(),
            higher_is_better,
            initial_pool: initial_pool.to_vec(),
        }),
    )?;
    drop(ledger);

    let mut pool = initial_pool.to_vec();
    let mut cumulative = 0usize;
    let mut entries = Vec::new();
    for iteration in 0..config.max_iterations {
        if pool.is_empty() || config.total_budget.is_some_and(|t| cumulative >= t) {
            break;
        }
        let scores = scorer(iteration, &pool)?;
        if scores.len() != pool.len() {
            return Err(Error::Length {
                expected: pool.len() as u64,
                actual: scores.len() as u64,
            });
        }
        let scored: Vec<(String, f64)> = pool.iter().cloned().zip(scores).collect();
        let outcome = select_step(config, higher_is_better, iteration, &scored, cumulative)?;
        let manifest: PathBuf = out_dir.join(format!("selection-{iteration:03}.jsonl"));
        write_selection(&manifest, iteration, &outcome)?;
        if let Some(template) = &config.trainer_command {
            run_trainer(template, &manifest, iteration)?;
        }
        let chosen: BTreeSet<&String> = outcome.selected.iter().collect();
        let pool_size = pool.len();
        pool.retain(|id| !chosen.contains(id));
        cumulative += outcome.selected.len();
        let entry = LedgerEntry {
            iteration,
            pool_size,
            scores: scored
                .into_iter()
                .map(|(image_id, score)| ScoredImage { image_id, score })
                .collect(),
            threshold: outcome.threshold,
            budget_consumed: outcome.selected.len(),
            selected: outcome.selected,
            annotation_mode: outcome.annotation_mode,
            cumulative_budget: cumulative,
            selection_manifest: manifest
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            warnings: outcome.warnings,
        };
        let mut ledger = OpenOptions::new()
            .append(true)
            .open(&ledger_path)
            .map_err(|e| Error::io(&ledger_path, e))?;
        append(&mut ledger, &ledger_path, &LedgerRecord::Iteration(entry.clone()))?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_ledger(path: impl AsRef<Path>) -> Result<(LedgerHeader, Vec<LedgerEntry>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end();
        if !body.is_empty() {
            let record: LedgerRecord = serde_json::from_str(body).map_err(|e| match Error::json(body, e) {
                Error::Parse { offset: o, message } => Error::Parse {
                    offset: offset + o,
                    message,
                },
                other => other,
            })?;
            match record {
                LedgerRecord::Header(h) if header.is_none() && entries.is_empty() => header = Some(h),
                LedgerRecord::Header(_) => {
                    return Err(Error::Format("ledger header must come first and once".into()))
                }
                LedgerRecord::Iteration(e) if header.is_some() => entries.push(e),
                LedgerRecord::Iteration(_) => {
                    return Err(Error::Format("ledger entry before the header".into()))
                }
            }
        }
        offset += line.len();
    }
    let header = header.ok_or_else(|| Error::Format("ledger has no header".into()))?;
    Ok((header, entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub iterations: usize,
    pub total_selected: usize,
    pub identical: bool,
    pub mismatches: Vec<String>,
}

/// Recomputes every selection from the recorded scores and compares it with
/// the ledger, along with pool contents and budget accounting.
pub fn replay_ledger(header: &LedgerHeader, entries: &[LedgerEntry]) -> Result<ReplayReport> {
    let config = &header.config;
    config.validate()?;
    let mut pool = header.initial_pool.clone();
    let mut cumulative = 0usize;
    let mut mismatches = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, e) in entries.iter().enumerate() {
        let it = e.iteration;
        if it != k {
            mismatches.push(format!("entry {k} has iteration {it}"));
        }
        let ids: Vec<String> = e.scores.iter().map(|s| s.image_id.clone()).collect();
        if ids != pool {
            mismatches.push(format!("iteration {it}: scored pool differs from the replayed pool"));
        }
        let scored: Vec<(String, f64)> = e.scores.iter().map(|s| (s.image_id.clone(), s.score)).collect();
        let outcome = select_step(config, header.higher_is_better, it, &scored, cumulative)?;
        if outcome.selected != e.selected {
            mismatches.push(format!("iteration {it}: selection differs"));
        }
        if outcome.threshold != e.threshold || outcome.annotation_mode != e.annotation_mode {
            mismatches.push(format!("iteration {it}: threshold or annotation mode differs"));
        }
        for id in &e.selected {
            if !seen.insert(id.clone()) {
                mismatches.push(format!("iteration {it}: {id:?} selected twice"));
            }
        }
        cumulative += e.selected.len();
        if e.cumulative_budget != cumulative || e.budget_consumed != e.selected.len() {
            mismatches.push(format!("iteration {it}: budget accounting differs"));
        }
        if config.total_budget.is_some_and(|t| cumulative > t) {
            mismatches.push(format!("iteration {it}: total budget exceeded"));
        }
        let chosen: BTreeSet<&String> = e.selected.iter().collect();
        pool.retain(|id| !chosen.contains(id));
    }
    Ok(ReplayReport {
        iterations: entries.len(),
        total_selected: cumulative,
        identical: mismatches.is_empty(),
        mismatches,
    })
}
