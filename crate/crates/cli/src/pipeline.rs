use std::path::Path;

use anyhow::{anyhow, Context};
use docdet_core::data_model::{
    load_probmap, save_label_mask, save_manifest, save_page, DatasetManifest, ManifestEntry,
};
use docdet_core::raster::{
    extract_objects, rasterize_polygon, trace_outline, Connectivity, ExtractConfig,
};
use docdet_core::synth::{write_dataset, SynthConfig, WriteOptions, MANIFEST_FILE};
use docdet_core::uniformize::{normalize_page, scale_page, PairAction, UniformizeConfig};
use docdet_core::{ObjectInstance, ObjectMask, PageRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{ExtractArgs, NormalizeArgs, SynthArgs};
use crate::dataset;
use crate::report::{Output, Report};
use crate::usage;

fn create_dirs(root: &Path, names: &[&str]) -> anyhow::Result<()> {
    for name in names {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Pixel-boundary outline of a mask, with a warning when it does not
/// reproduce the mask exactly (holes or several components).
fn outline(mask: &ObjectMask, what: &str, warnings: &mut Vec<String>) -> Option<docdet_core::Polygon> {
    let poly = trace_outline(mask)?;
    let (w, h) = mask.grid();
    if rasterize_polygon(&poly, w, h).pixel_count() != mask.pixel_count() {
        warnings.push(format!("{what}: outline covers a different pixel set than the mask"));
    }
    Some(poly)
}

fn collect<T>(results: Vec<(T, Vec<String>)>, warnings: &mut Vec<String>) -> Vec<T> {
    results
        .into_iter()
        .map(|(v, w)| {
            warnings.extend(w);
            v
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ObjectPixels {
    index: usize,
    class: u16,
    input_pixels: u64,
    output_pixels: u64,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    image_id: &'a str,
    width: u32,
    height: u32,
    objects: Vec<ObjectPixels>,
    events: &'a [docdet_core::uniformize::PairEvent],
}

#[derive(Debug, Serialize)]
struct NormalizeRow {
    image_id: String,
    width: u32,
    height: u32,
    objects: usize,
    eroded_pairs: usize,
    split_pairs: usize,
    kept_pairs: usize,
    vanished: usize,
}

fn normalize_entry(
    e: &ManifestEntry,
    cfg: &UniformizeConfig,
    out_dir: &Path,
) -> anyhow::Result<((ManifestEntry, NormalizeRow), Vec<String>)> {
    let id = &e.image_id;
    let mut warnings = Vec::new();
    let gt = dataset::page(&e.gt_path, id, &mut warnings)?;
    let pred = dataset::page(&e.pred_path, id, &mut warnings)?;
    let scaled_gt = scale_page(&gt, cfg.target_long_side);
    let scaled_pred = scale_page(&pred, cfg.target_long_side);
    let norm = normalize_page(&scaled_gt, cfg).map_err(|err| anyhow!("{id}: {err}"))?;
    warnings.extend(norm.warnings.iter().map(|w| format!("{id}: {w}")));

    let label_path = out_dir.join("labels").join(format!("{id}.png"));
    save_label_mask(&norm.label, &label_path)?;
    let sidecar = Sidecar {
        image_id: id,
        width: scaled_gt.width,
        height: scaled_gt.height,
        objects: scaled_gt
            .objects
            .iter()
            .enumerate()
            .map(|(index, o)| ObjectPixels {
                index,
                class: o.class_id,
                input_pixels: norm.input_masks[index].pixel_count(),
                output_pixels: norm.masks[index].pixel_count(),
            })
            .collect(),
        events: &norm.events,
    };
    let sidecar_path = out_dir.join("labels").join(format!("{id}.json"));
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .with_context(|| format!("writing {}", sidecar_path.display()))?;

    let mut page = PageRecord::new(id.clone(), scaled_gt.width, scaled_gt.height);
    page.page_text = scaled_gt.page_text.clone();
    let mut vanished = 0;
    for (i, (obj, mask)) in scaled_gt.objects.iter().zip(&norm.masks).enumerate() {
        match outline(mask, &format!("{id}: object {i}"), &mut warnings) {
            Some(polygon) => page.objects.push(ObjectInstance {
                polygon,
                ..obj.clone()
            }),
            None => {
                vanished += 1;
                warnings.push(format!("{id}: object {i} vanished during uniformization"));
            }
        }
    }
    let gt_path = out_dir.join("gt").join(format!("{id}.json"));
    let pred_path = out_dir.join("pred").join(format!("{id}.json"));
    save_page(&page, &gt_path)?;
    save_page(&scaled_pred, &pred_path)?;
    let unscaled = (scaled_pred.width, scaled_pred.height) == (pred.width, pred.height);
    if !unscaled && (e.probmap_path.is_some() || e.ensemble_paths.is_some()) {
        warnings.push(format!("{id}: page was rescaled; probability map and ensemble dropped"));
    }
    let count = |want: fn(&PairAction) -> bool| norm.events.iter().filter(|ev| want(&ev.action)).count();
    Ok((
        (
            ManifestEntry {
                image_id: id.clone(),
                gt_path,
                pred_path,
                probmap_path: e.probmap_path.clone().filter(|_| unscaled),
                ensemble_paths: e.ensemble_paths.clone().filter(|_| unscaled),
            },
            NormalizeRow {
                image_id: id.clone(),
                width: page.width,
                height: page.height,
                objects: page.objects.len(),
                eroded_pairs: count(|a| matches!(a, PairAction::Eroded)),
                split_pairs: count(|a| matches!(a, PairAction::Split { .. })),
                kept_pairs: count(|a| matches!(a, PairAction::Kept)),
                vanished,
            },
        ),
        warnings,
    ))
}

pub fn normalize(a: &NormalizeArgs, out: &Output) -> anyhow::Result<()> {
    let cfg = UniformizeConfig {
        target_long_side: a.long_side,
        overlap_ratio_threshold: a.overlap_threshold,
        erosion_radius: a.erosion,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = dataset::manifest(&a.manifest)?;
    create_dirs(&a.out_dir, &["labels", "gt", "pred"])?;
    let results = manifest
        .entries
        .par_iter()
        .map(|e| normalize_entry(e, &cfg, &a.out_dir))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut report = Report::new("normalize", cfg)?;
    report.input("manifest", &a.manifest)?;
    let (entries, rows): (Vec<_>, Vec<_>) = collect(results, &mut report.warnings).into_iter().unzip();
    save_manifest(
        &DatasetManifest {
            classes: manifest.classes.clone(),
            entries,
        },
        a.out_dir.join(MANIFEST_FILE),
    )?;
    let rows: Vec<NormalizeRow> = rows;
    let totals = serde_json::json!({
        "pages": rows.len(),
        "eroded_pairs": rows.iter().map(|r| r.eroded_pairs).sum::<usize>(),
        "split_pairs": rows.iter().map(|r| r.split_pairs).sum::<usize>(),
        "kept_pairs": rows.iter().map(|r| r.kept_pairs).sum::<usize>(),
        "vanished": rows.iter().map(|r| r.vanished).sum::<usize>(),
    });
    report.summarize(&format!("normalized {} pages: {totals}", rows.len()));
    report.section("uniformization", totals)?;
    report.per_image = rows.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    out.json(&report)
}

#[derive(Debug, Serialize)]
struct ExtractRow {
    image_id: String,
    objects: usize,
}

fn extract_entry(
    e: &ManifestEntry,
    cfg: &ExtractConfig,
    out_dir: &Path,
) -> anyhow::Result<((ManifestEntry, ExtractRow), Vec<String>)> {
    let id = &e.image_id;
    let mut warnings = Vec::new();
    let path = e
        .probmap_path
        .as_ref()
        .ok_or_else(|| anyhow!("{id}: manifest entry has no probability map"))?;
    let map = load_probmap(path).with_context(|| format!("{id}: loading {}", path.display()))?;
    let masks = extract_objects(&map, cfg).map_err(|err| anyhow!("{id}: {err}"))?;
    let mut page = PageRecord::new(id.clone(), map.width(), map.height());
    for (i, m) in masks.iter().enumerate() {
        if let Some(poly) = outline(m, &format!("{id}: component {i}"), &mut warnings) {
            let mut obj = ObjectInstance::new(m.class_id, poly);
            obj.confidence = m.confidence;
            page.objects.push(obj);
        }
    }
    let pred_path = out_dir.join("pred").join(format!("{id}.json"));
    save_page(&page, &pred_path)?;
    Ok((
        (
            ManifestEntry {
                pred_path,
                ..e.clone()
            },
            ExtractRow {
                image_id: id.clone(),
                objects: page.objects.len(),
            },
        ),
        warnings,
    ))
}

pub fn extract(a: &ExtractArgs, out: &Output) -> anyhow::Result<()> {
    let cfg = ExtractConfig {
        threshold: a.threshold,
        min_cc: a.min_cc,
        connectivity: Connectivity::from_number(a.connectivity).map_err(|e| usage(e.to_string()))?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = dataset::manifest(&a.manifest)?;
    create_dirs(&a.out_dir, &["pred"])?;
    let results = manifest
        .entries
        .par_iter()
        .map(|e| extract_entry(e, &cfg, &a.out_dir))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut report = Report::new("extract", cfg)?;
    report.input("manifest", &a.manifest)?;
    let (entries, rows): (Vec<_>, Vec<ExtractRow>) = collect(results, &mut report.warnings).into_iter().unzip();
    save_manifest(
        &DatasetManifest {
            classes: manifest.classes.clone(),
            entries,
        },
        a.out_dir.join(MANIFEST_FILE),
    )?;
    let total: usize = rows.iter().map(|r| r.objects).sum();
    report.section("extraction", serde_json::json!({ "pages": rows.len(), "objects": total }))?;
    report.summarize(&format!("extracted {total} objects from {} pages", rows.len()));
    report.per_image = rows.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    out.json(&report)
}

fn synth_config(a: &SynthArgs) -> SynthConfig {
    let d = SynthConfig::default();
    SynthConfig {
        pages: a.pages.unwrap_or(d.pages),
        width: a.width.unwrap_or(d.width),
        height: a.height.unwrap_or(d.height),
        min_objects: a.min_objects.unwrap_or(d.min_objects),
        max_objects: a.max_objects.unwrap_or(d.max_objects),
        num_classes: a.classes.unwrap_or(d.num_classes),
        jitter_px: a.jitter.unwrap_or(d.jitter_px),
        drop_prob: a.drop.unwrap_or(d.drop_prob),
        spurious_rate: a.spurious.unwrap_or(d.spurious_rate),
        text_mutation_rate: a.text_mutation.unwrap_or(d.text_mutation_rate),
        severity_spread: a.severity_spread.unwrap_or(d.severity_spread),
        prob_epsilon: a.epsilon.unwrap_or(d.prob_epsilon),
        ensemble_size: a.ensemble_size,
        member_jitter_px: a.member_jitter.unwrap_or(d.member_jitter_px),
        member_drop_prob: a.member_drop.unwrap_or(d.member_drop_prob),
        seed: a.seed,
    }
}

pub fn synth(a: &SynthArgs, out: &Output) -> anyhow::Result<()> {
    let cfg = synth_config(a);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.ensemble_size == 1 {
        return Err(usage("--ensemble-size must be 0 or at least 2"));
    }
    let truth = write_dataset(&cfg, &a.out_dir, &WriteOptions { probmaps: !a.no_probmaps })?;
    let n = truth.len().max(1) as f64;
    let mean_map = truth.iter().map(|t| t.map).sum::<f64>() / n;
    let mean_cer = truth.iter().map(|t| t.cer).sum::<f64>() / n;
    let mut report = Report::new("synth", &cfg)?;
    report.section(
        "dataset",
        serde_json::json!({ "pages": truth.len(), "mean_true_map": mean_map, "mean_true_cer": mean_cer }),
    )?;
    report.summarize(&format!(
        "wrote {} pages, mean true mAP {mean_map:.4}, mean CER {mean_cer:.4}",
        truth.len()
    ));
    report.per_image = truth.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    out.json(&report)
}
