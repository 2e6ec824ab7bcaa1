use docdet_core::object_metrics::{match_image, parse_thresholds, pool_images, ImageMatches};
use docdet_core::pixel_metrics::{pixel_confusion, pixel_metrics, summarize_pages, ConfusionCounts};
use docdet_core::raster::page_masks;
use docdet_core::text_metrics::{
    cer_line, page_counts, page_hypothesis, LineCounts, LineEval, PageTextCounts, TextEvalResult,
    TextLine,
};
use docdet_core::{LabelMask, ObjectMask, PageRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{EvalLevel, TextMode};
use crate::dataset::{self, ImagePair};
use crate::report::{json_lines, Output, Report};
use crate::usage;

#[derive(Debug, Serialize)]
struct EvalConfig {
    level: &'static str,
    classes: Option<usize>,
    thresholds: Vec<f64>,
    text_mode: Option<TextMode>,
}

#[derive(Debug, Default)]
struct ImageResult {
    confusion: Option<ConfusionCounts>,
    matches: Option<ImageMatches>,
    page_text: Option<PageTextCounts>,
    lines: Option<LineEval>,
}

#[derive(Debug, Serialize)]
struct ImageRow<'a> {
    image_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pixel_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wer: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PageTextSection {
    mode: TextMode,
    cer: f64,
    wer: f64,
    #[serde(flatten)]
    counts: PageTextCounts,
}

#[derive(Debug, Serialize)]
struct LineTextSection {
    mode: TextMode,
    #[serde(flatten)]
    result: TextEvalResult,
}

fn label_mask(masks: &[ObjectMask], page: &PageRecord) -> LabelMask {
    let mut label = LabelMask::new(page.width, page.height);
    for m in masks {
        m.draw_into(&mut label);
    }
    label
}

fn text_lines(masks: Vec<ObjectMask>, page: &PageRecord) -> Vec<TextLine> {
    masks
        .into_iter()
        .zip(&page.objects)
        .map(|(m, o)| TextLine::new(m, o.text.clone().unwrap_or_default()))
        .collect()
}

struct Levels {
    pixel: Option<usize>,
    object: bool,
    text: Option<TextMode>,
}

fn evaluate(p: &ImagePair, levels: &Levels, thresholds: &[f64]) -> anyhow::Result<ImageResult> {
    let gt_masks = page_masks(&p.gt);
    let pred_masks = page_masks(&p.pred);
    let mut r = ImageResult::default();
    let id = &p.image_id;
    if let Some(classes) = levels.pixel {
        let confusion = pixel_confusion(
            &label_mask(&pred_masks, &p.pred),
            &label_mask(&gt_masks, &p.gt),
            classes,
        )
        .map_err(|e| anyhow::anyhow!("{id}: {e}"))?;
        r.confusion = Some(confusion);
    }
    if levels.object {
        r.matches = Some(match_image(&pred_masks, &gt_masks, thresholds).map_err(|e| anyhow::anyhow!("{id}: {e}"))?);
    }
    match levels.text {
        Some(TextMode::Page) => {
            let gt_text = match &p.gt.page_text {
                Some(t) => t.clone(),
                None => page_hypothesis(&text_lines(gt_masks, &p.gt)),
            };
            r.page_text = Some(page_counts(&text_lines(pred_masks, &p.pred), &gt_text));
        }
        Some(TextMode::Line) => {
            let preds = text_lines(pred_masks, &p.pred);
            let gts = text_lines(gt_masks, &p.gt);
            r.lines = Some(cer_line(&preds, &gts, thresholds).map_err(|e| anyhow::anyhow!("{id}: {e}"))?);
        }
        None => {}
    }
    Ok(r)
}

fn max_class(pairs: &[ImagePair]) -> usize {
    pairs
        .iter()
        .flat_map(|p| p.gt.objects.iter().chain(&p.pred.objects))
        .map(|o| o.class_id as usize)
        .max()
        .unwrap_or(0)
}

pub fn run(level: &EvalLevel, out: &Output) -> anyhow::Result<()> {
    let a = level.args();
    let thresholds = parse_thresholds(&a.thresholds).map_err(|e| usage(format!("--thresholds: {e}")))?;
    if a.classes.is_some_and(|c| c < 2) {
        return Err(usage("--classes counts background and must be at least 2"));
    }
    let manifest = dataset::manifest(&a.manifest)?;
    let (pairs, warnings) = dataset::pairs(&manifest)?;
    let all = matches!(level, EvalLevel::All(_));
    let pixel = matches!(level, EvalLevel::Pixel(_)) || all;
    let levels = Levels {
        pixel: pixel.then(|| {
            a.classes
                .or(manifest.num_classes())
                .unwrap_or_else(|| (max_class(&pairs) + 1).max(2))
        }),
        object: matches!(level, EvalLevel::Object(_)) || all,
        text: (matches!(level, EvalLevel::Text(_)) || all).then_some(a.mode),
    };
    let results = pairs
        .par_iter()
        .map(|p| evaluate(p, &levels, &thresholds))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut report = Report::new(
        format!("eval {}", level.name()),
        EvalConfig {
            level: level.name(),
            classes: levels.pixel,
            thresholds: thresholds.clone(),
            text_mode: levels.text,
        },
    )?;
    report.input("manifest", &a.manifest)?;
    report.warnings = warnings;
    let mut summary = vec![format!("evaluated {} images", pairs.len())];

    if levels.pixel.is_some() {
        let pages: Vec<ConfusionCounts> = results.iter().filter_map(|r| r.confusion.clone()).collect();
        let s = summarize_pages(&pages);
        summary.push(format!("pixel macro IoU {:.4}", s.micro.macro_avg.iou));
        report.section("pixel", s)?;
    }
    if levels.object {
        let images: Vec<ImageMatches> = results.iter().filter_map(|r| r.matches.clone()).collect();
        let pooled = pool_images(&images, &thresholds)?;
        summary.push(format!("mAP {:.4}", pooled.map));
        let mut section = serde_json::to_value(&pooled)?;
        let mean_image_map = if images.is_empty() {
            None
        } else {
            Some(images.iter().map(ImageMatches::map).sum::<f64>() / images.len() as f64)
        };
        section["mean_image_map"] = serde_json::to_value(mean_image_map)?;
        report.section("object", section)?;
    }
    match levels.text {
        Some(TextMode::Page) => {
            let mut counts = PageTextCounts::default();
            for c in results.iter().filter_map(|r| r.page_text.as_ref()) {
                counts.accumulate(c);
            }
            summary.push(format!("CER {:.4}", counts.cer()));
            report.section(
                "text",
                PageTextSection {
                    mode: TextMode::Page,
                    cer: counts.cer(),
                    wer: counts.wer(),
                    counts,
                },
            )?;
        }
        Some(TextMode::Line) => {
            let mut counts = vec![LineCounts::default(); thresholds.len()];
            for e in results.iter().filter_map(|r| r.lines.as_ref()) {
                for (total, c) in counts.iter_mut().zip(&e.counts) {
                    total.accumulate(c);
                }
            }
            let result = TextEvalResult::from_counts(&thresholds, &counts);
            summary.push(format!("CER range {:.4}", result.cer_range));
            report.section(
                "text",
                LineTextSection {
                    mode: TextMode::Line,
                    result,
                },
            )?;
        }
        None => {}
    }

    let rows: Vec<ImageRow> = pairs
        .iter()
        .zip(&results)
        .map(|(p, r)| {
            let (cer, wer) = match (&r.page_text, &r.lines) {
                (Some(c), _) => (Some(c.cer()), Some(c.wer())),
                (None, Some(e)) => {
                    let res = e.result();
                    (Some(res.cer_range), Some(res.wer_range))
                }
                (None, None) => (None, None),
            };
            ImageRow {
                image_id: &p.image_id,
                pixel_iou: r.confusion.as_ref().map(|c| pixel_metrics(c).macro_avg.iou),
                map: r.matches.as_ref().map(ImageMatches::map),
                cer,
                wer,
            }
        })
        .collect();
    if let Some(path) = &a.per_image_out {
        std::fs::write(path, json_lines(&rows)?)
            .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
    }
    report.per_image = rows.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    report.summarize(&summary.join(", "));
    out.json(&report)
}
