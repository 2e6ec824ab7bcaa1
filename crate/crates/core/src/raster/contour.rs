use super::ObjectMask;
use crate::{Point, Polygon};

/// Outer boundary of the 8-connected component containing the mask's first
/// pixel, as a rectilinear polygon along pixel edges.
///
/// Rasterizing the outline gives back the component with its holes filled.
/// Returns `None` for an empty mask.
pub fn trace_outline(mask: &ObjectMask) -> Option<Polygon> {
    let (sx, sy) = mask.pixels().next()?;
    let member = |x: i64, y: i64| x >= 0 && y >= 0 && mask.contains(x as u32, y as u32);
    // Pixel in the quadrant `q` (components ±1) around vertex `v`.
    let quadrant = |v: (i64, i64), q: (i64, i64)| {
        member(
            v.0 + if q.0 > 0 { 0 } else { -1 },
            v.1 + if q.1 > 0 { 0 } else { -1 },
        )
    };

    // Walk clockwise in screen coordinates, interior on the right.
    let start = (sx as i64, sy as i64);
    let mut v = start;
    let mut d = (1i64, 0i64);
    let mut corners = vec![Point::new(start.0 as f64, start.1 as f64)];
    let limit = 4 * mask.pixel_count() as usize + 8;
    for _ in 0..limit {
        v = (v.0 + d.0, v.1 + d.1);
        let right = (-d.1, d.0);
        let front_left = quadrant(v, (d.0 - right.0, d.1 - right.1));
        let front_right = quadrant(v, (d.0 + right.0, d.1 + right.1));
        let next = if front_left {
            (d.1, -d.0)
        } else if front_right {
            d
        } else {
            right
        };
        if v == start && next == (1, 0) {
            break;
        }
        if next != d {
            corners.push(Point::new(v.0 as f64, v.1 as f64));
        }
        d = next;
    }
    Some(Polygon::new(corners))
}
