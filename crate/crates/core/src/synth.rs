//! Seeded synthetic datasets with controlled prediction quality.
//!
//! Reference pages hold non-overlapping horizontal text-line rectangles with
//! random texts. Predictions copy them with edge jitter, dropped lines,
//! spurious boxes and character mutations; a per-page severity factor spreads
//! quality across pages. Probability maps hold `1 - ε` inside predicted
//! objects, and optional ensembles re-perturb the prediction per member.
//! The induced per-image mAP is recorded so estimators can be checked
//! against the truth.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{save_manifest, save_page, save_probmap, DatasetManifest, ManifestEntry};
use crate::object_metrics::{default_thresholds, match_image};
use crate::raster::{page_masks, rasterize_object};
use crate::rng::substream;
use crate::text_metrics::cer;
use crate::{Error, ObjectInstance, PageRecord, Polygon, ProbabilityMap, Result};

/// Highest `ε`; keeps every predicted pixel above the default 0.7 extraction threshold.
pub const MAX_EPSILON: f64 = 0.29;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pages: usize,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Number of object classes (background excluded).
    pub num_classes: u16,
    /// Maximum edge displacement of predicted boxes, in pixels.
    pub jitter_px: f64,
    pub drop_prob: f64,
    /// Chance that each reference line spawns one spurious prediction.
    pub spurious_rate: f64,
    /// Per-character substitution / deletion chance in predicted texts.
    pub text_mutation_rate: f64,
    /// Spread of the per-page severity factor, uniform on `[1 - s, 1 + s]`.
    pub severity_spread: f64,
    /// Upper bound of `ε` for matched predictions; spurious ones use `[ε, MAX_EPSILON]`.
    pub prob_epsilon: f64,
    /// Members per ensemble; 0 writes none.
    pub ensemble_size: usize,
    pub member_jitter_px: f64,
    pub member_drop_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pages: 20,
            width: 768,
            height: 768,
            min_objects: 4,
            max_objects: 12,
            num_classes: 1,
            jitter_px: 2.0,
            drop_prob: 0.05,
            spurious_rate: 0.05,
            text_mutation_rate: 0.02,
            severity_spread: 0.0,
            prob_epsilon: 0.05,
            ensemble_size: 0,
            member_jitter_px: 1.0,
            member_drop_prob: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Predictions identical to the reference.
    pub fn noiseless() -> Self {
        SynthConfig {
            jitter_px: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            text_mutation_rate: 0.0,
            member_jitter_px: 0.0,
            member_drop_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("drop_prob", self.drop_prob),
            ("spurious_rate", self.spurious_rate),
            ("text_mutation_rate", self.text_mutation_rate),
            ("severity_spread", self.severity_spread),
            ("member_drop_prob", self.member_drop_prob),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..=MAX_EPSILON).contains(&self.prob_epsilon) {
            return Err(Error::Config(format!(
                "prob_epsilon = {} outside [0, {MAX_EPSILON}]",
                self.prob_epsilon
            )));
        }
        if !(self.jitter_px >= 0.0 && self.member_jitter_px >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("pages must be at least 16x16".into()));
        }
        if self.num_classes == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(
                "need num_classes >= 1 and min_objects <= max_objects".into(),
            ));
        }
        if self.max_objects as u32 > self.height / 4 {
            return Err(Error::Config(format!(
                "{} lines do not fit on a page {} px high",
                self.max_objects, self.height
            )));
        }
        Ok(())
    }
}

/// Integer rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn polygon(&self) -> Polygon {
        Polygon::rect(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64)
    }

    fn from_polygon(p: &Polygon) -> Rect {
        let xs = p.points.iter().map(|q| q.x);
        let ys = p.points.iter().map(|q| q.y);
        Rect {
            x0: xs.clone().fold(f64::INFINITY, f64::min).round() as i64,
            x1: xs.fold(f64::NEG_INFINITY, f64::max).round() as i64,
            y0: ys.clone().fold(f64::INFINITY, f64::min).round() as i64,
            y1: ys.fold(f64::NEG_INFINITY, f64::max).round() as i64,
        }
    }

    /// Moves each edge by up to `amount` pixels, keeping at least one pixel
    /// inside the page.
    fn jittered(&self, rng: &mut ChaCha8Rng, amount: f64, w: u32, h: u32) -> Rect {
        let mut d = || {
            if amount <= 0.0 {
                0
            } else {
                rng.gen_range(-amount..=amount).round() as i64
            }
        };
        let (w, h) = (w as i64, h as i64);
        let x0 = (self.x0 + d()).clamp(0, w - 1);
        let y0 = (self.y0 + d()).clamp(0, h - 1);
        let x1 = (self.x1 + d()).clamp(x0 + 1, w);
        let y1 = (self.y1 + d()).clamp(y0 + 1, h);
        Rect { x0, y0, x1, y1 }
    }
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=8);
    (0..n)
        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
        .collect()
}

fn random_text(rng: &mut ChaCha8Rng, words: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(words);
    (0..n).map(|_| random_word(rng)).collect::<Vec<_>>().join(" ")
}

fn mutate_text(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    if rate <= 0.0 {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        let r: f64 = rng.gen();
        if r < rate / 2.0 {
            continue;
        } else if r < rate {
            out.push(LETTERS[rng.gen_range(0..LETTERS.len())] as char);
        } else {
            out.push(c);
        }
    }
    out
}

fn chance(rng: &mut ChaCha8Rng, p: f64) -> bool {
    p > 0.0 && rng.gen::<f64>() < p.min(1.0)
}

/// One generated page: reference, prediction and ensemble members.
#[derive(Debug, Clone)]
pub struct SynthPage {
    pub gt: PageRecord,
    pub pred: PageRecord,
    pub members: Vec<PageRecord>,
    /// Noise multiplier applied to this page.
    pub severity: f64,
}

impl SynthPage {
    /// mAP@[.5,.95] of the prediction against the reference.
    pub fn true_map(&self) -> Result<f64> {
        Ok(match_image(&page_masks(&self.pred), &page_masks(&self.gt), &default_thresholds())?.map())
    }

    /// Page CER of the prediction's lines in reading order.
    pub fn true_cer(&self) -> f64 {
        let lines: Vec<crate::text_metrics::TextLine> = self
            .pred
            .objects
            .iter()
            .map(|o| {
                crate::text_metrics::TextLine::new(
                    rasterize_object(o, self.pred.width, self.pred.height),
                    o.text.clone().unwrap_or_default(),
                )
            })
            .collect();
        let hyp = crate::text_metrics::page_hypothesis(&lines);
        cer(&hyp, self.gt.page_text.as_deref().unwrap_or(""))
    }
}

pub fn image_id(index: usize) -> String {
    format!("page-{index:05}")
}

fn layout(cfg: &SynthConfig, id: &str, rng: &mut ChaCha8Rng) -> PageRecord {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut page = PageRecord::new(id, cfg.width, cfg.height);
    let slot = cfg.height as i64 / n.max(1) as i64;
    let mut texts = Vec::with_capacity(n);
    for k in 0..n as i64 {
        let line_h = ((slot as f64 * rng.gen_range(0.4..0.8)).round() as i64).max(2);
        let top = k * slot + rng.gen_range(0..=(slot - line_h).max(0));
        let x0 = (w * rng.gen_range(0.02..0.2)).round() as i64;
        let x1 = (w * rng.gen_range(0.6..0.98)).round() as i64;
        let rect = Rect {
            x0,
            y0: top,
            x1,
            y1: (top + line_h).min(h as i64),
        };
        let text = random_text(rng, 2..=6);
        let class = rng.gen_range(1..=cfg.num_classes);
        texts.push(text.clone());
        page.objects
            .push(ObjectInstance::new(class, rect.polygon()).with_text(text));
    }
    page.page_text = Some(texts.join(" "));
    page
}

fn confidence(eps: f64) -> f64 {
    1.0 - eps
}

fn predict(cfg: &SynthConfig, gt: &PageRecord, severity: f64, rng: &mut ChaCha8Rng) -> PageRecord {
    let mut pred = PageRecord::new(gt.image_id.clone(), gt.width, gt.height);
    let jitter = cfg.jitter_px * severity;
    let drop = cfg.drop_prob * severity;
    let spurious = cfg.spurious_rate * severity;
    let mutation = cfg.text_mutation_rate * severity;
    for obj in &gt.objects {
        if chance(rng, drop) {
            continue;
        }
        let rect = Rect::from_polygon(&obj.polygon).jittered(rng, jitter, gt.width, gt.height);
        let eps = rng.gen_range(0.0..=cfg.prob_epsilon);
        let text = mutate_text(obj.text.as_deref().unwrap_or(""), mutation, rng);
        pred.objects.push(
            ObjectInstance::new(obj.class_id, rect.polygon())
                .with_confidence(confidence(eps))
                .with_text(text),
        );
    }
    for _ in &gt.objects {
        if !chance(rng, spurious) {
            continue;
        }
        let (w, h) = (gt.width as i64, gt.height as i64);
        let bw = rng.gen_range(8..=(w * 3 / 10).max(9));
        let bh = rng.gen_range(4..=(h / 20).max(5));
        let x0 = rng.gen_range(0..=(w - bw).max(0));
        let y0 = rng.gen_range(0..=(h - bh).max(0));
        let rect = Rect {
            x0,
            y0,
            x1: (x0 + bw).min(w),
            y1: (y0 + bh).min(h),
        };
        let eps = rng.gen_range(cfg.prob_epsilon..=MAX_EPSILON);
        let class = rng.gen_range(1..=cfg.num_classes);
        pred.objects.push(
            ObjectInstance::new(class, rect.polygon())
                .with_confidence(confidence(eps))
                .with_text(random_text(rng, 1..=2)),
        );
    }
    pred
}

fn member(cfg: &SynthConfig, pred: &PageRecord, rng: &mut ChaCha8Rng) -> PageRecord {
    let mut out = PageRecord::new(pred.image_id.clone(), pred.width, pred.height);
    for obj in &pred.objects {
        if chance(rng, cfg.member_drop_prob) {
            continue;
        }
        let rect = Rect::from_polygon(&obj.polygon).jittered(rng, cfg.member_jitter_px, pred.width, pred.height);
        let mut o = obj.clone();
        o.polygon = rect.polygon();
        out.objects.push(o);
    }
    out
}

/// Generates page `index`; every page draws from its own named streams.
pub fn generate_page(cfg: &SynthConfig, index: usize) -> Result<SynthPage> {
    cfg.validate()?;
    let id = image_id(index);
    let gt = layout(cfg, &id, &mut substream(cfg.seed, &format!("synth-layout-{index}")));
    let mut rng = substream(cfg.seed, &format!("synth-prediction-{index}"));
    let s = cfg.severity_spread;
    let severity = if s > 0.0 { rng.gen_range(1.0 - s..=1.0 + s) } else { 1.0 };
    let pred = predict(cfg, &gt, severity, &mut rng);
    let members = (0..cfg.ensemble_size)
        .map(|k| member(cfg, &pred, &mut substream(cfg.seed, &format!("synth-member-{index}-{k}"))))
        .collect();
    Ok(SynthPage {
        gt,
        pred,
        members,
        severity,
    })
}

/// `confidence` of each object on its class plane, background `1 - confidence`;
/// later objects overwrite earlier ones.
pub fn probability_map(pred: &PageRecord, num_classes: u32) -> Result<ProbabilityMap> {
    let mut map = ProbabilityMap::background(pred.width, pred.height, num_classes);
    for obj in &pred.objects {
        if u32::from(obj.class_id) >= num_classes {
            return Err(Error::Range(format!(
                "class {} in a {num_classes}-class map",
                obj.class_id
            )));
        }
        let p = obj.confidence.unwrap_or(1.0) as f32;
        let mask = rasterize_object(obj, pred.width, pred.height);
        for (x, y) in mask.pixels() {
            for c in 0..num_classes {
                map.set(c, x, y, 0.0);
            }
            map.set(u32::from(obj.class_id), x, y, p);
            map.set(0, x, y, 1.0 - p);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub image_id: String,
    pub map: f64,
    pub cer: f64,
    pub severity: f64,
}

#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub probmaps: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { probmaps: true }
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";

/// Writes `gt/`, `pred/`, `prob/`, `ens/`, `manifest.jsonl` and
/// `truth.jsonl` under `out_dir`.
pub fn write_dataset(cfg: &SynthConfig, out_dir: &Path, opts: &WriteOptions) -> Result<Vec<TruthRecord>> {
    cfg.validate()?;
    let dirs = ["gt", "pred", "prob", "ens"];
    for d in dirs {
        let p = out_dir.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let num_classes = u32::from(cfg.num_classes) + 1;
    let results = (0..cfg.pages)
        .into_par_iter()
        .map(|i| -> Result<(ManifestEntry, TruthRecord)> {
            let page = generate_page(cfg, i)?;
            let id = page.gt.image_id.clone();
            let gt_path = out_dir.join("gt").join(format!("{id}.json"));
            let pred_path = out_dir.join("pred").join(format!("{id}.json"));
            save_page(&page.gt, &gt_path)?;
            save_page(&page.pred, &pred_path)?;
            let probmap_path = if opts.probmaps {
                let p = out_dir.join("prob").join(format!("{id}.pmap"));
                save_probmap(&probability_map(&page.pred, num_classes)?, &p)?;
                Some(p)
            } else {
                None
            };
            let ensemble_paths = if page.members.is_empty() {
                None
            } else {
                let dir = out_dir.join("ens").join(&id);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let mut paths = Vec::new();
                for (k, m) in page.members.iter().enumerate() {
                    let p: PathBuf = dir.join(format!("m{k:02}.json"));
                    save_page(m, &p)?;
                    paths.push(p);
                }
                Some(paths)
            };
            let truth = TruthRecord {
                image_id: id.clone(),
                map: page.true_map()?,
                cer: page.true_cer(),
                severity: page.severity,
            };
            Ok((
                ManifestEntry {
                    image_id: id,
                    gt_path,
                    pred_path,
                    probmap_path,
                    ensemble_paths,
                },
                truth,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (entries, truth): (Vec<ManifestEntry>, Vec<TruthRecord>) = results.into_iter().unzip();
    let manifest = DatasetManifest {
        classes: (1..=cfg.num_classes).map(|c| format!("class_{c}")).collect(),
        entries,
    };
    save_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;
    let mut text = String::new();
    for t in &truth {
        text.push_str(&serde_json::to_string(t).expect("truth record serializes"));
        text.push('\n');
    }
    let truth_path = out_dir.join(TRUTH_FILE);
    std::fs::write(&truth_path, text).map_err(|e| Error::io(&truth_path, e))?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{load_manifest, load_page, load_probmap};
    use crate::object_metrics::IouTable;

    fn small(cfg: SynthConfig) -> SynthConfig {
        SynthConfig {
            width: 200,
            height: 160,
            min_objects: 3,
            max_objects: 6,
            ..cfg
        }
    }

    #[test]
    fn noiseless_predictions_match_reference() {
        let cfg = small(SynthConfig::noiseless());
        for i in 0..5 {
            let p = generate_page(&cfg, i).unwrap();
            assert_eq!(p.gt.objects.len(), p.pred.objects.len());
            for (g, q) in p.gt.objects.iter().zip(&p.pred.objects) {
                assert_eq!((g.class_id, &g.polygon, &g.text), (q.class_id, &q.polygon, &q.text));
            }
            assert_eq!(p.true_map().unwrap(), 1.0);
            assert_eq!(p.true_cer(), 0.0);
        }
    }

    #[test]
    fn drop_everything_gives_empty_predictions() {
        let cfg = small(SynthConfig {
            drop_prob: 1.0,
            spurious_rate: 0.0,
            ..Default::default()
        });
        let p = generate_page(&cfg, 0).unwrap();
        assert!(p.pred.objects.is_empty());
        assert_eq!(p.true_map().unwrap(), 0.0);
    }

    #[test]
    fn reference_lines_do_not_overlap_and_validate() {
        let cfg = SynthConfig {
            num_classes: 3,
            ..SynthConfig::default()
        };
        for i in 0..10 {
            let mut p = generate_page(&cfg, i).unwrap();
            assert!(p.gt.validate().unwrap().is_empty());
            assert!(p.pred.validate().unwrap().is_empty());
            let masks = page_masks(&p.gt);
            for a in 0..masks.len() {
                for b in a + 1..masks.len() {
                    assert_eq!(masks[a].intersection_count(&masks[b]), 0);
                }
            }
        }
    }

    #[test]
    fn jitter_on_40px_boxes_gives_partial_map() {
        let cfg = SynthConfig {
            width: 400,
            height: 400,
            min_objects: 5,
            max_objects: 5,
            jitter_px: 2.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            ..Default::default()
        };
        let mut gt = PageRecord::new("p", 400, 400);
        for k in 0..5 {
            let y = 60.0 * k as f64 + 10.0;
            gt.objects.push(ObjectInstance::new(1, Polygon::rect(20.0 + 60.0 * k as f64, y, 60.0 + 60.0 * k as f64, y + 40.0)));
        }
        let pred = predict(&cfg, &gt, 1.0, &mut substream(4, "jitter"));
        let page = SynthPage { gt, pred, members: vec![], severity: 1.0 };
        let m = page.true_map().unwrap();
        assert!(m > 0.0 && m < 1.0, "{m}");
        // Independent recomputation from the IoU table.
        let table = IouTable::new(&page_masks(&page.pred), &page_masks(&page.gt)).unwrap();
        let again: f64 = default_thresholds().iter().map(|&t| table.matches(t).average_precision()).sum::<f64>() / 10.0;
        assert!((m - again).abs() < 1e-12);
    }

    #[test]
    fn generation_is_seeded_per_page() {
        let cfg = small(SynthConfig { ensemble_size: 3, ..Default::default() });
        let a = generate_page(&cfg, 2).unwrap();
        let b = generate_page(&cfg, 2).unwrap();
        assert_eq!(a.pred, b.pred);
        assert_eq!(a.members, b.members);
        assert_eq!(a.members.len(), 3);
        let other = generate_page(&SynthConfig { seed: 1, ..cfg }, 2).unwrap();
        assert_ne!(a.gt, other.gt);
    }

    #[test]
    fn probability_map_marks_predictions() {
        let cfg = small(SynthConfig::default());
        let p = generate_page(&cfg, 0).unwrap();
        let map = probability_map(&p.pred, 2).unwrap();
        assert!(map.max_sum_deviation() < 1e-6);
        let obj = &p.pred.objects[0];
        let mask = rasterize_object(obj, 200, 160);
        let (x, y) = mask.pixels().next().unwrap();
        assert!(map.get(1, x, y) > 0.7);
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(SynthConfig { drop_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { prob_epsilon: 0.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { min_objects: 5, max_objects: 2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn dataset_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(SynthConfig { pages: 3, ensemble_size: 2, ..Default::default() });
        let truth = write_dataset(&cfg, dir.path(), &WriteOptions::default()).unwrap();
        assert_eq!(truth.len(), 3);
        let m = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.num_classes(), Some(2));
        let e = &m.entries[1];
        let page = generate_page(&cfg, 1).unwrap();
        assert_eq!(load_page(&e.gt_path).unwrap().page, page.gt);
        assert_eq!(e.ensemble_paths.as_ref().unwrap().len(), 2);
        let map = load_probmap(e.probmap_path.as_ref().unwrap()).unwrap();
        assert_eq!((map.width(), map.height()), (200, 160));
        assert_eq!(truth[1].map, page.true_map().unwrap());
    }
}
