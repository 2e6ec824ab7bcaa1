use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObjectInstance, PageRecord, Point, Polygon};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawObject {
    class: i64,
    polygon: Vec<[f64; 2]>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawPage {
    image_id: String,
    width: i64,
    height: i64,
    #[serde(default)]
    page_text: Option<String>,
    objects: Vec<RawObject>,
}

/// A validated page plus the warnings raised while loading it.
#[derive(Debug, Clone)]
pub struct LoadedPage {
    pub page: PageRecord,
    pub warnings: Vec<String>,
}

pub fn load_page(path: impl AsRef<Path>) -> Result<LoadedPage> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    page_from_json(&text)
}

pub fn page_from_json(text: &str) -> Result<LoadedPage> {
    let raw: RawPage = serde_json::from_str(text).map_err(|e| Error::json(text, e))?;
    let dim = |name: &str, v: i64| -> Result<u32> {
        if v <= 0 || v > u32::MAX as i64 {
            Err(Error::Validation(format!("{name} must be a positive pixel count, got {v}")))
        } else {
            Ok(v as u32)
        }
    };
    let mut page = PageRecord {
        image_id: raw.image_id,
        width: dim("width", raw.width)?,
        height: dim("height", raw.height)?,
        page_text: raw.page_text,
        objects: Vec::with_capacity(raw.objects.len()),
    };
    for (idx, obj) in raw.objects.into_iter().enumerate() {
        if obj.class < 1 || obj.class > u16::MAX as i64 {
            return Err(Error::Validation(format!(
                "object {idx}: class {} outside [1, {}]",
                obj.class,
                u16::MAX
            )));
        }
        page.objects.push(ObjectInstance {
            class_id: obj.class as u16,
            polygon: Polygon::new(obj.polygon.iter().map(|c| Point::new(c[0], c[1])).collect()),
            confidence: obj.confidence,
            text: obj.text,
        });
    }
    let warnings = page.validate()?;
    Ok(LoadedPage { page, warnings })
}

pub fn page_to_json(page: &PageRecord) -> String {
    let raw = RawPage {
        image_id: page.image_id.clone(),
        width: page.width as i64,
        height: page.height as i64,
        page_text: page.page_text.clone(),
        objects: page
            .objects
            .iter()
            .map(|o| RawObject {
                class: o.class_id as i64,
                polygon: o.polygon.points.iter().map(|p| [p.x, p.y]).collect(),
                confidence: o.confidence,
                text: o.text.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("page serialization cannot fail")
}

pub fn save_page(page: &PageRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, page_to_json(page)).map_err(|e| Error::io(path, e))
}
