use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use docdet_core::confidence::{DEFAULT_BINS, DEFAULT_ENSEMBLE_SIZE};
use docdet_core::raster::ExtractConfig;
use docdet_core::selection::Strategy;
use docdet_core::uniformize::UniformizeConfig;

use crate::usage;

#[derive(Debug, Parser)]
#[command(
    name = "docdet",
    version,
    about = "Evaluation and confidence estimation for document object detection",
    after_help = "Every subcommand except al-run accepts --config FILE: a JSON object of default \
                  flag values keyed by flag name. Flags on the command line take precedence."
)]
pub struct Cli {
    /// Worker threads for per-image work.
    #[arg(long, global = true, env = "DOCDET_EVAL_JOBS")]
    pub jobs: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rescale and uniformize reference annotations.
    Normalize(NormalizeArgs),
    /// Turn probability maps into predicted objects.
    Extract(ExtractArgs),
    /// Pixel, object or text evaluation of a dataset.
    Eval {
        #[command(subcommand)]
        level: EvalLevel,
    },
    /// Per-image confidence estimators.
    Confidence {
        #[command(subcommand)]
        estimator: ConfidenceCommand,
    },
    /// Metric of retained images as low-confidence images are rejected.
    RejectCurve(RejectArgs),
    /// Select images from a scored pool.
    Select(SelectArgs),
    /// Active-learning loop with a ledger, or replay of a ledger.
    AlRun(AlRunArgs),
    /// Generate a synthetic dataset with known prediction quality.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = UniformizeConfig::DEFAULT_LONG_SIDE)]
    pub long_side: u32,
    #[arg(long, default_value_t = UniformizeConfig::DEFAULT_OVERLAP_THRESHOLD)]
    pub overlap_threshold: f64,
    #[arg(long, default_value_t = UniformizeConfig::DEFAULT_EROSION_RADIUS)]
    pub erosion: u32,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = ExtractConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = ExtractConfig::DEFAULT_MIN_CC)]
    pub min_cc: u64,
    /// Pixel connectivity, 4 or 8.
    #[arg(long, default_value_t = 8)]
    pub connectivity: u8,
}

#[derive(Debug, Subcommand)]
pub enum EvalLevel {
    Pixel(EvalArgs),
    Object(EvalArgs),
    Text(EvalArgs),
    /// Pixel, object and text sections in one report.
    All(EvalArgs),
}

impl EvalLevel {
    pub fn args(&self) -> &EvalArgs {
        match self {
            EvalLevel::Pixel(a) | EvalLevel::Object(a) | EvalLevel::Text(a) | EvalLevel::All(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalLevel::Pixel(_) => "pixel",
            EvalLevel::Object(_) => "object",
            EvalLevel::Text(_) => "text",
            EvalLevel::All(_) => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    Page,
    Line,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of classes including background; defaults to the manifest vocabulary.
    #[arg(long)]
    pub classes: Option<usize>,
    /// IoU thresholds as start:stop:step, a comma list or one value.
    #[arg(long, default_value = "0.5:0.95:0.05")]
    pub thresholds: String,
    #[arg(long, value_enum, default_value_t = TextMode::Page)]
    pub mode: TextMode,
    /// Also write the per-image table as JSON lines.
    #[arg(long)]
    pub per_image_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ConfidenceCommand {
    /// Mean posterior probability of the predicted objects.
    Pce(PceArgs),
    /// Variance of object counts over an ensemble.
    Dov(EnsembleArgs),
    /// Mean pairwise mAP over an ensemble.
    Dap(EnsembleArgs),
    /// Train the mAP regression forest on predictions with references.
    RfrTrain(RfrTrainArgs),
    /// Predict per-image mAP with a trained forest.
    RfrPredict(RfrPredictArgs),
}

#[derive(Debug, Args)]
pub struct PceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Members used per image; the manifest must list at least this many.
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE_SIZE)]
    pub ensemble_size: usize,
}

#[derive(Debug, Args)]
pub struct RfrTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub min_samples_split: usize,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct RfrPredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct RejectArgs {
    /// JSON lines with image_id and value, as written by `confidence`.
    #[arg(long)]
    pub scores: PathBuf,
    /// JSON lines with image_id and a metric value.
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value = "map")]
    pub metric_key: String,
    /// Bootstrap resamples for the bands; 100 when given without a value.
    #[arg(long, num_args = 0..=1, default_missing_value = "100")]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score thresholds to sweep; defaults depend on the orientation.
    #[arg(long)]
    pub thresholds: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Lowest,
    Highest,
    Random,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Lowest => Strategy::Lowest,
            StrategyArg::Highest => Strategy::Highest,
            StrategyArg::Random => Strategy::Random,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("amount").required(true).args(["threshold", "budget"])))]
pub struct SelectArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AlRunArgs {
    /// Loop configuration (JSON).
    #[arg(long, required_unless_present = "replay", requires = "out_dir")]
    pub config: Option<PathBuf>,
    /// Directory for the ledger and selection manifests.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Recompute every selection of an existing ledger and compare.
    #[arg(long, conflicts_with_all = ["config", "out_dir"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub pages: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    /// Object classes, background excluded.
    #[arg(long)]
    pub classes: Option<u16>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub drop: Option<f64>,
    #[arg(long)]
    pub spurious: Option<f64>,
    #[arg(long)]
    pub text_mutation: Option<f64>,
    #[arg(long)]
    pub severity_spread: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE_SIZE)]
    pub ensemble_size: usize,
    #[arg(long)]
    pub member_jitter: Option<f64>,
    #[arg(long)]
    pub member_drop: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_probmaps: bool,
}

fn has_flag(argv: &[OsString], flag: &str) -> bool {
    let prefix = format!("{flag}=");
    argv.iter().any(|a| {
        a.to_str()
            .is_some_and(|s| s == flag || s.starts_with(&prefix))
    })
}

/// Replaces `--config FILE` with the file's flag values, skipping flags that
/// are already present. `al-run` keeps its own `--config`.
pub fn merge_config_file(mut argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    if argv.get(1).and_then(|a| a.to_str()) == Some("al-run") {
        return Ok(argv);
    }
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy().into_owned();
        let value = if arg == "--config" {
            let v = argv
                .get(i + 1)
                .ok_or_else(|| usage("--config needs a file"))?
                .clone();
            argv.drain(i..i + 2);
            v
        } else if let Some(v) = arg.strip_prefix("--config=") {
            let v = OsString::from(v);
            argv.remove(i);
            v
        } else {
            i += 1;
            continue;
        };
        if path.replace(PathBuf::from(value)).is_some() {
            return Err(usage("--config given more than once"));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let serde_json::Value::Object(map) = value else {
        return Err(usage("config file must hold a JSON object"));
    };
    let mut extra = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(&argv, &flag) {
            continue;
        }
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            _ => Err(usage(format!("config key {key:?} must be a string, number or list of them"))),
        };
        match &v {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => extra.push(OsString::from(flag)),
            serde_json::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<anyhow::Result<Vec<_>>>()?;
                extra.push(OsString::from(flag));
                extra.push(OsString::from(parts.join(",")));
            }
            other => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(scalar(other)?));
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_values_fill_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"min_cc": 10, "threshold": 0.5, "verbose": false, "x": [1, 2]}"#).unwrap();
        let argv = os(&["docdet", "extract", "--threshold", "0.9", "--config", cfg.to_str().unwrap()]);
        let merged = merge_config_file(argv).unwrap();
        assert_eq!(
            merged,
            os(&["docdet", "extract", "--threshold", "0.9", "--min-cc", "10", "--x", "1,2"])
        );
    }

    #[test]
    fn al_run_keeps_its_config() {
        let argv = os(&["docdet", "al-run", "--config", "loop.json"]);
        assert_eq!(merge_config_file(argv.clone()).unwrap(), argv);
    }

    #[test]
    fn nested_objects_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"a": {"b": 1}}"#).unwrap();
        let argv = os(&["docdet", "extract", &format!("--config={}", cfg.display())]);
        assert!(merge_config_file(argv).is_err());
    }
}
