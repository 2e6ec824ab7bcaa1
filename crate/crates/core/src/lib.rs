//! Evaluation and confidence machinery for document object detection.
//!
//! The crate works on rasterized objects: annotated or predicted polygons are
//! turned into [`raster::ObjectMask`]s and every metric is computed on pixel
//! sets at the ground-truth resolution.
//!
//! - [`data_model`]: pages, probability maps, label masks and their file formats.
//! - [`raster`]: rasterization, connected components, erosion, overlap.
//! - [`uniformize`]: annotation clean-up (rescaling, touching and overlapping objects).
//! - [`pixel_metrics`], [`object_metrics`], [`text_metrics`]: evaluation at three levels.
//! - [`confidence`]: per-image confidence estimators and the regression forest.
//! - [`selection`]: rejection curves, bootstrap bands and active-learning selection.
//! - [`synth`]: seeded synthetic datasets with known per-image quality.

pub mod confidence;
pub mod data_model;
mod error;
pub mod object_metrics;
pub mod pixel_metrics;
pub mod raster;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod text_metrics;
pub mod uniformize;

pub use data_model::{
    LabelMask, ObjectInstance, PageRecord, Point, Polygon, ProbabilityMap,
};
pub use error::{Error, Result};
pub use raster::ObjectMask;
