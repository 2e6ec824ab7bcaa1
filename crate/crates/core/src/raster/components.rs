use std::cmp::Reverse;
use std::collections::VecDeque;

use super::{Connectivity, ExtractConfig, ObjectMask};
use crate::data_model::at_map_precision;
use crate::{Error, LabelMask, ProbabilityMap, Result};

const N4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Maximal same-class connected regions of the non-background pixels.
///
/// Components smaller than `cfg.min_cc` are dropped. Output is ordered by
/// `(y0, x0, pixel_count desc)`, ties keeping discovery (scan) order.
pub fn connected_components(mask: &LabelMask, cfg: &ExtractConfig) -> Vec<ObjectMask> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let offsets: &[(i64, i64)] = match cfg.connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };
    let mut visited = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        let class = mask.data[start];
        if class == 0 || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        members.clear();
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            members.push((x as u32, y as u32));
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !visited[j] && mask.data[j] == class {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if (members.len() as u64) < cfg.min_cc {
            continue;
        }
        out.push(
            ObjectMask::from_pixels(mask.width, mask.height, members.iter().copied())
                .with_class(class),
        );
    }
    out.sort_by_key(|m| {
        let b = m.bbox().expect("components are non-empty");
        (b.y0, b.x0, Reverse(m.pixel_count()))
    });
    out
}

/// Thresholds a probability map and splits it into objects.
///
/// A pixel takes the most probable object class (lowest id on ties) when that
/// probability is strictly above `cfg.threshold`, background otherwise. Each
/// object's confidence is the mean probability of its class over its pixels.
pub fn extract_objects(pm: &ProbabilityMap, cfg: &ExtractConfig) -> Result<Vec<ObjectMask>> {
    cfg.validate()?;
    if pm.num_classes() < 2 {
        return Err(Error::Config(format!(
            "probability map needs at least 2 classes, got {}",
            pm.num_classes()
        )));
    }
    let (w, h) = (pm.width(), pm.height());
    let n = w as usize * h as usize;
    let mut best = vec![0.0f32; n];
    let mut label = LabelMask::new(w, h);
    for class in 1..pm.num_classes() {
        for (i, &p) in pm.plane(class).iter().enumerate() {
            if p > best[i] {
                best[i] = p;
                label.data[i] = class as u16;
            }
        }
    }
    for (i, &p) in best.iter().enumerate() {
        if (p as f64) <= cfg.threshold {
            label.data[i] = 0;
        }
    }
    let mut objects = connected_components(&label, cfg);
    for obj in objects.iter_mut() {
        let plane = pm.plane(obj.class_id as u32);
        let sum: f64 = obj
            .pixels()
            .map(|(x, y)| plane[y as usize * w as usize + x as usize] as f64)
            .sum();
        obj.confidence = Some(at_map_precision(sum / obj.pixel_count() as f64));
    }
    Ok(objects)
}
