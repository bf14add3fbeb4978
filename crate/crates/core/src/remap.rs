//! Sampling an image through a backward map.

use rayon::prelude::*;

use crate::{BackwardMap, ImageBuffer, Point2};

pub const WHITE: [u8; 3] = [255, 255, 255];

// Coordinates this far outside the valid range still snap to the border, so maps
// computed with round-off at the image edge do not lose their outermost pixels.
const EDGE_SLACK: f64 = 1e-6;

/// Output pixel `(j, i)` is the bilinear sample of `image` at `map(j, i)`.
///
/// Sources outside `[0, w - 1] x [0, h - 1]` produce `fill` (gray images use
/// `fill[0]`). The output has the map's dimensions and the image's channel count.
pub fn remap(image: &ImageBuffer, map: &BackwardMap, fill: [u8; 3]) -> ImageBuffer {
    match image.channels() {
        1 => remap_n::<1>(image, map, fill),
        3 => remap_n::<3>(image, map, fill),
        _ => remap_n::<0>(image, map, fill),
    }
}

// `C` is the channel count, or 0 to read it from the image at run time.
fn remap_n<const C: usize>(image: &ImageBuffer, map: &BackwardMap, fill: [u8; 3]) -> ImageBuffer {
    let c = if C == 0 { image.channels() as usize } else { C };
    let w = map.width() as usize;
    let mut out = vec![0u8; w * map.height() as usize * c];
    out.par_chunks_mut(w * c)
        .zip(map.data().par_chunks(w))
        .for_each(|(row, coords)| {
            for (px, &p) in row.chunks_exact_mut(c).zip(coords) {
                if !sample::<C>(image, p, px) {
                    px.copy_from_slice(&fill[..c]);
                }
            }
        });
    ImageBuffer::new(map.width(), map.height(), image.channels(), out).expect("dimensions follow the map")
}

/// Writes the bilinear sample at `p` into `out` (one value per channel).
/// Returns `false`, leaving `out` untouched, when `p` lies outside the image.
#[inline]
pub fn sample_bilinear(image: &ImageBuffer, p: Point2, out: &mut [u8]) -> bool {
    sample::<0>(image, p, out)
}

#[inline(always)]
fn sample<const C: usize>(image: &ImageBuffer, p: Point2, out: &mut [u8]) -> bool {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    if !(p.x >= -EDGE_SLACK && p.y >= -EDGE_SLACK && p.x <= max_x + EDGE_SLACK && p.y <= max_y + EDGE_SLACK) {
        return false;
    }
    let x = p.x.clamp(0.0, max_x);
    let y = p.y.clamp(0.0, max_y);
    // x and y are non-negative here, so truncation is floor
    let x0 = x as usize;
    let y0 = y as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let c = if C == 0 { image.channels() as usize } else { C };
    let data = image.data();
    let i00 = (y0 * w + x0) * c;
    let i01 = (y0 * w + x1) * c;
    let i10 = (y1 * w + x0) * c;
    let i11 = (y1 * w + x1) * c;
    let (p00, p01, p10, p11) = (&data[i00..i00 + c], &data[i01..i01 + c], &data[i10..i10 + c], &data[i11..i11 + c]);
    for (k, o) in out[..c].iter_mut().enumerate() {
        let top = p00[k] as f64 * (1.0 - fx) + p01[k] as f64 * fx;
        let bottom = p10[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
        // the blend lies in [0, 255]; adding one half and truncating rounds it
        *o = (top * (1.0 - fy) + bottom * fy + 0.5) as u8;
    }
    true
}
