//! Pages, objects, probability maps and label masks, plus their file formats.
//!
//! Pages are stored as JSON, probability maps in the `PMAP` binary layout and
//! label masks as 8-bit grayscale PNG. Class 0 is background everywhere.

mod label;
mod manifest;
mod page;
mod probmap;

pub use label::{load_label_mask, save_label_mask, LabelMask};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry};
pub use page::{load_page, page_from_json, page_to_json, save_page, LoadedPage};
pub use probmap::{at_map_precision, load_probmap, probmap_from_bytes, probmap_to_bytes, save_probmap, ProbabilityMap};

use serde::{Deserialize, Serialize};

/// Image-space vertex, in pixels. Sub-pixel values are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub points: Vec<Point>,
}

impl Polygon {
    pub fn new(points: Vec<Point>) -> Self {
        Polygon { points }
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Self {
        Polygon {
            points: coords.iter().map(|c| Point::new(c[0], c[1])).collect(),
        }
    }

    /// Axis-aligned rectangle covering `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon::from_coords(&[[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Signed shoelace area (positive for counter-clockwise in y-up axes).
    pub fn signed_area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>() / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn scaled(&self, factor: f64) -> Polygon {
        Polygon {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x * factor, p.y * factor))
                .collect(),
        }
    }

    /// True when two non-adjacent edges intersect or touch.
    pub fn is_self_intersecting(&self) -> bool {
        let n = self.points.len();
        if n < 4 {
            return false;
        }
        let edges: Vec<(Point, Point)> = self.edges().collect();
        for i in 0..n {
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return true;
                }
            }
        }
        false
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// One annotated or predicted object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    /// Always ≥ 1; 0 is reserved for background.
    pub class_id: u16,
    pub polygon: Polygon,
    pub confidence: Option<f64>,
    pub text: Option<String>,
}

impl ObjectInstance {
    pub fn new(class_id: u16, polygon: Polygon) -> Self {
        ObjectInstance {
            class_id,
            polygon,
            confidence: None,
            text: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }
}

/// All objects of one image, annotated or predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectInstance>,
    /// Full-page reference transcription, lines in reading order joined by one space.
    pub page_text: Option<String>,
}

impl PageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        PageRecord {
            image_id: image_id.into(),
            width,
            height,
            objects: Vec::new(),
            page_text: None,
        }
    }

    /// Checks every invariant and clamps stray vertices into
    /// `[-0.5, dim + 0.5]`. Returns the warnings raised along the way.
    pub fn validate(&mut self) -> crate::Result<Vec<String>> {
        use crate::Error;

        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "page {:?}: dimensions must be positive, got {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        let mut warnings = Vec::new();
        let (xmax, ymax) = (self.width as f64 + 0.5, self.height as f64 + 0.5);
        for (idx, obj) in self.objects.iter_mut().enumerate() {
            if obj.class_id == 0 {
                return Err(Error::Validation(format!(
                    "object {idx}: class 0 is reserved for background"
                )));
            }
            if obj.polygon.len() < 3 {
                return Err(Error::Validation(format!(
                    "object {idx}: polygon has {} points, at least 3 required",
                    obj.polygon.len()
                )));
            }
            if let Some(c) = obj.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Validation(format!(
                        "object {idx}: confidence {c} outside [0, 1]"
                    )));
                }
            }
            let mut clamped = false;
            for p in obj.polygon.points.iter_mut() {
                if !p.x.is_finite() || !p.y.is_finite() {
                    return Err(Error::Validation(format!(
                        "object {idx}: non-finite vertex ({}, {})",
                        p.x, p.y
                    )));
                }
                let (cx, cy) = (p.x.clamp(-0.5, xmax), p.y.clamp(-0.5, ymax));
                if cx != p.x || cy != p.y {
                    clamped = true;
                    *p = Point::new(cx, cy);
                }
            }
            if clamped {
                warnings.push(format!(
                    "page {:?} object {idx}: vertices outside the image were clamped",
                    self.image_id
                ));
            }
            if obj.polygon.is_self_intersecting() {
                warnings.push(format!(
                    "page {:?} object {idx}: polygon is self-intersecting",
                    self.image_id
                ));
            }
        }
        Ok(warnings)
    }
}
