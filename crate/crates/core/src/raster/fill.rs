use super::ObjectMask;
use crate::{ObjectInstance, PageRecord, Point, Polygon};

/// Scanline fill under the pixel-centre convention.
///
/// Pixel (x, y) is a member iff its centre (x + 0.5, y + 0.5) lies inside the
/// polygon under the even-odd rule, or on its boundary.
pub fn rasterize_polygon(poly: &Polygon, width: u32, height: u32) -> ObjectMask {
    if poly.len() < 3 || width == 0 || height == 0 {
        return ObjectMask::empty(width, height);
    }
    if poly.area() == 0.0 {
        log::warn!("degenerate polygon with zero area rasterizes to an empty mask");
        return ObjectMask::empty(width, height);
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &poly.points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    // Window of candidate pixels: centres within the polygon's extent, clipped to the grid.
    let col0 = first_center_at_or_after(xmin).max(0);
    let col1 = (first_center_after(xmax) - 1).min(width as i64 - 1);
    let row0 = first_center_at_or_after(ymin).max(0);
    let row1 = (first_center_after(ymax) - 1).min(height as i64 - 1);
    if col0 > col1 || row0 > row1 {
        return ObjectMask::empty(width, height);
    }
    let ww = (col1 - col0 + 1) as usize;
    let wh = (row1 - row0 + 1) as usize;
    let mut dense = vec![false; ww * wh];

    let mut crossings: Vec<f64> = Vec::with_capacity(poly.len());
    for row in row0..=row1 {
        let py = row as f64 + 0.5;
        crossings.clear();
        for (a, b) in poly.edges() {
            if (a.y > py) != (b.y > py) {
                crossings.push((b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        let line = &mut dense[(row - row0) as usize * ww..][..ww];
        for span in crossings.chunks_exact(2) {
            let start = first_center_at_or_after(span[0]).max(col0);
            let end = first_center_at_or_after(span[1]).min(col1 + 1);
            for x in start..end {
                line[(x - col0) as usize] = true;
            }
        }
    }

    for (a, b) in poly.edges() {
        mark_boundary(a, b, (col0, col1, row0, row1), ww, &mut dense);
    }
    ObjectMask::from_dense(width, height, (col0, row0), ww, &dense)
}

/// Sets every window pixel whose centre lies exactly on segment `ab`.
fn mark_boundary(a: Point, b: Point, window: (i64, i64, i64, i64), ww: usize, dense: &mut [bool]) {
    let (col0, col1, row0, row1) = window;
    let (ylo, yhi) = (a.y.min(b.y), a.y.max(b.y));
    let first = first_center_at_or_after(ylo).max(row0);
    let last = (first_center_after(yhi) - 1).min(row1);
    for row in first..=last {
        let py = row as f64 + 0.5;
        let (lo, hi) = if a.y == b.y {
            (
                first_center_at_or_after(a.x.min(b.x)),
                first_center_after(a.x.max(b.x)) - 1,
            )
        } else {
            let x = a.x + (b.x - a.x) * (py - a.y) / (b.y - a.y);
            let c = (x - 0.5).floor() as i64;
            (c - 2, c + 2)
        };
        for col in lo.max(col0)..=hi.min(col1) {
            if on_segment(a, b, col as f64 + 0.5, py) {
                dense[(row - row0) as usize * ww + (col - col0) as usize] = true;
            }
        }
    }
}

fn on_segment(a: Point, b: Point, px: f64, py: f64) -> bool {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x) == 0.0
        && px >= a.x.min(b.x)
        && px <= a.x.max(b.x)
        && py >= a.y.min(b.y)
        && py <= a.y.max(b.y)
}

/// Smallest integer i with i + 0.5 >= v.
fn first_center_at_or_after(v: f64) -> i64 {
    if !v.is_finite() {
        return if v > 0.0 { i64::MAX / 2 } else { i64::MIN / 2 };
    }
    let mut i = (v - 0.5).ceil() as i64;
    while (i - 1) as f64 + 0.5 >= v {
        i -= 1;
    }
    while (i as f64) + 0.5 < v {
        i += 1;
    }
    i
}

/// Smallest integer i with i + 0.5 > v.
fn first_center_after(v: f64) -> i64 {
    let mut i = first_center_at_or_after(v);
    while (i as f64) + 0.5 <= v {
        i += 1;
    }
    i
}

/// Rasterizes one object, carrying its class id and confidence.
pub fn rasterize_object(obj: &ObjectInstance, width: u32, height: u32) -> ObjectMask {
    rasterize_polygon(&obj.polygon, width, height)
        .with_class(obj.class_id)
        .with_confidence(obj.confidence)
}

/// Masks of every object of a page, in object order.
pub fn page_masks(page: &PageRecord) -> Vec<ObjectMask> {
    page.objects
        .iter()
        .map(|o| rasterize_object(o, page.width, page.height))
        .collect()
}
