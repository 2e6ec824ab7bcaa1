use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One image of a dataset. Paths are resolved relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub gt_path: PathBuf,
    pub pred_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probmap_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_paths: Option<Vec<PathBuf>>,
}

impl ManifestEntry {
    fn resolved(&self, base: &Path) -> ManifestEntry {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        ManifestEntry {
            image_id: self.image_id.clone(),
            gt_path: join(&self.gt_path),
            pred_path: join(&self.pred_path),
            probmap_path: self.probmap_path.as_ref().map(join),
            ensemble_paths: self
                .ensemble_paths
                .as_ref()
                .map(|v| v.iter().map(join).collect()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ClassDeclaration {
    classes: Vec<String>,
}

/// A dataset: per-image file references plus the optional class vocabulary.
///
/// The file is JSON-lines. A line of the form `{"classes": [...]}` declares the
/// vocabulary (index 0 names class 1); every other line is a [`ManifestEntry`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    /// Entries with paths already resolved against the manifest directory.
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        let mut seen = BTreeSet::new();
        let mut offset = 0usize;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim_end();
            let line_offset = offset;
            offset += line.len();
            if trimmed.trim_start().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| {
                let Error::Parse { offset, message } = Error::json(trimmed, e) else {
                    unreachable!()
                };
                Error::Parse {
                    offset: line_offset + offset,
                    message,
                }
            })?;
            if value.get("classes").is_some() {
                let decl: ClassDeclaration = serde_json::from_value(value).map_err(|e| {
                    Error::Validation(format!("class declaration: {e}"))
                })?;
                if !manifest.classes.is_empty() {
                    return Err(Error::Validation(
                        "class vocabulary declared more than once".into(),
                    ));
                }
                manifest.classes = decl.classes;
                continue;
            }
            let entry: ManifestEntry = serde_json::from_value(value)
                .map_err(|e| Error::Validation(format!("manifest entry at byte {line_offset}: {e}")))?;
            if !seen.insert(entry.image_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate image_id {:?} in manifest",
                    entry.image_id
                )));
            }
            manifest.entries.push(entry.resolved(base));
        }
        Ok(manifest)
    }

    /// Fails on the first referenced file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            let mut paths: Vec<&PathBuf> = vec![&e.gt_path, &e.pred_path];
            paths.extend(e.probmap_path.iter());
            if let Some(ens) = &e.ensemble_paths {
                paths.extend(ens.iter());
            }
            for p in paths {
                if !p.exists() {
                    return Err(Error::Validation(format!(
                        "image {:?}: referenced file {} does not exist",
                        e.image_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// JSON-lines text with paths written relative to `base` where possible.
    pub fn to_jsonl(&self, base: &Path) -> String {
        let rel = |p: &PathBuf| {
            if p.is_absolute() == base.is_absolute() {
                pathdiff::diff_paths(p, base).unwrap_or_else(|| p.clone())
            } else {
                p.clone()
            }
        };
        let mut out = String::new();
        if !self.classes.is_empty() {
            let decl = ClassDeclaration {
                classes: self.classes.clone(),
            };
            out.push_str(&serde_json::to_string(&decl).expect("class declaration serializes"));
            out.push('\n');
        }
        for e in &self.entries {
            let entry = ManifestEntry {
                image_id: e.image_id.clone(),
                gt_path: rel(&e.gt_path),
                pred_path: rel(&e.pred_path),
                probmap_path: e.probmap_path.as_ref().map(rel),
                ensemble_paths: e.ensemble_paths.as_ref().map(|v| v.iter().map(rel).collect()),
            };
            out.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Number of classes including background, from the declared vocabulary.
    pub fn num_classes(&self) -> Option<usize> {
        (!self.classes.is_empty()).then(|| self.classes.len() + 1)
    }
}

/// Reads a manifest, resolves its paths and checks that every file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = DatasetManifest::parse(&text, base)?;
    manifest.check_files()?;
    Ok(manifest)
}

/// Writes a manifest with paths relative to its own directory where possible.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::write(path, manifest.to_jsonl(base)).map_err(|e| Error::io(path, e))
}
