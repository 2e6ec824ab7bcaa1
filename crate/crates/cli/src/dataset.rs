use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context};
use docdet_core::data_model::{load_manifest, load_page, DatasetManifest, ManifestEntry};
use docdet_core::PageRecord;
use rayon::prelude::*;

pub fn manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Loads a page, prefixing its warnings with the image id.
pub fn page(path: &Path, image_id: &str, warnings: &mut Vec<String>) -> anyhow::Result<PageRecord> {
    let loaded = load_page(path).with_context(|| format!("{image_id}: loading {}", path.display()))?;
    warnings.extend(loaded.warnings.into_iter().map(|w| format!("{image_id}: {w}")));
    Ok(loaded.page)
}

pub struct ImagePair {
    pub image_id: String,
    pub gt: PageRecord,
    pub pred: PageRecord,
}

fn pair(entry: &ManifestEntry) -> anyhow::Result<(ImagePair, Vec<String>)> {
    let mut warnings = Vec::new();
    let id = &entry.image_id;
    let gt = page(&entry.gt_path, id, &mut warnings)?;
    let pred = page(&entry.pred_path, id, &mut warnings)?;
    if (gt.width, gt.height) != (pred.width, pred.height) {
        bail!(
            "{id}: prediction is {}x{} but the reference is {}x{}",
            pred.width,
            pred.height,
            gt.width,
            gt.height
        );
    }
    Ok((
        ImagePair {
            image_id: id.clone(),
            gt,
            pred,
        },
        warnings,
    ))
}

/// Reference and prediction of every entry, in manifest order.
pub fn pairs(manifest: &DatasetManifest) -> anyhow::Result<(Vec<ImagePair>, Vec<String>)> {
    let loaded = manifest
        .entries
        .par_iter()
        .map(pair)
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    let pairs = loaded
        .into_iter()
        .map(|(p, w)| {
            warnings.extend(w);
            p
        })
        .collect();
    Ok((pairs, warnings))
}

/// `(image_id, value)` rows from a JSON-lines file, in file order.
pub fn read_values(path: &Path, key: &str) -> anyhow::Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{} line {}", path.display(), n + 1);
        let v: serde_json::Value = serde_json::from_str(line).with_context(where_)?;
        let id = v
            .get("image_id")
            .and_then(|x| x.as_str())
            .with_context(|| format!("{}: missing image_id", where_()))?;
        let value = v
            .get(key)
            .and_then(|x| x.as_f64())
            .with_context(|| format!("{}: missing numeric {key:?}", where_()))?;
        if !seen.insert(id.to_string()) {
            bail!("{}: duplicate image_id {id:?}", where_());
        }
        rows.push((id.to_string(), value));
    }
    Ok(rows)
}
