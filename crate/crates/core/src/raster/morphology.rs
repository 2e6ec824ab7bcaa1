use super::ObjectMask;

/// Erosion by the (2r+1)×(2r+1) square structuring element.
///
/// Pixels outside the mask (including outside the image) count as background,
/// so erosion is separable: a horizontal pass then a vertical pass.
pub fn erode(mask: &ObjectMask, radius: u32) -> ObjectMask {
    if radius == 0 {
        return mask.clone();
    }
    let Some((b, dense)) = mask.to_dense() else {
        return mask.clone();
    };
    let (w, h) = (b.width() as usize, b.height() as usize);
    let r = radius as usize;
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        erode_line(&dense[y * w..(y + 1) * w], &mut horizontal[y * w..(y + 1) * w], r);
    }
    let mut column = vec![false; h];
    let mut eroded_column = vec![false; h];
    let mut out = vec![false; w * h];
    for x in 0..w {
        for y in 0..h {
            column[y] = horizontal[y * w + x];
        }
        erode_line(&column, &mut eroded_column, r);
        for y in 0..h {
            out[y * w + x] = eroded_column[y];
        }
    }
    let (gw, gh) = mask.grid();
    ObjectMask::from_dense(gw, gh, (b.x0 as i64, b.y0 as i64), w, &out)
        .with_class(mask.class_id)
        .with_confidence(mask.confidence)
}

/// 1-D erosion: `out[i]` is set iff `line[i-r..=i+r]` lies inside the line and is all set.
fn erode_line(line: &[bool], out: &mut [bool], r: usize) {
    let n = line.len();
    // run[i] = length of the run of set values ending at i.
    let mut run = 0usize;
    out.fill(false);
    for i in 0..n {
        run = if line[i] { run + 1 } else { 0 };
        if run > 2 * r {
            out[i - r] = true;
        }
    }
}
