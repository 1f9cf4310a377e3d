//! Footprint of latent cells on the reconstructed image.

use crate::roi::{ImageRect, LatentRect};

/// Half-open interval of output positions that can depend on inputs in `[a, b)`.
fn grow(a: i64, b: i64, stages: usize) -> (i64, i64) {
    // Entry 3x3 convolution, then per stage a 3x3 convolution + pixel shuffle
    // followed by another 3x3 convolution.
    let (mut a, mut b) = (a - 1, b + 1);
    for _ in 0..stages {
        a = 2 * a - 3;
        b = 2 * b + 3;
    }
    (a, b)
}

/// Pixels of a `width x height` reconstruction that can change when the
/// high-frequency latent cells in `rect` change. Everything outside is
/// determined by the other cells alone.
pub fn synthesis_footprint(rect: &LatentRect, stages: usize, width: usize, height: usize) -> ImageRect {
    let (y0, y1) = grow(rect.y0 as i64, rect.y1() as i64, stages);
    let (x0, x1) = grow(rect.x0 as i64, rect.x1() as i64, stages);
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let (y0, y1) = (clip(y0, height), clip(y1, height));
    let (x0, x1) = (clip(x0, width), clip(x1, width));
    ImageRect::new(x0, y0, x1 - x0, y1 - y0)
}

/// Per-pixel mask (row-major, `height x width`) of the union of footprints.
pub fn footprint_mask(rects: &[LatentRect], stages: usize, width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    for r in rects {
        let f = synthesis_footprint(r, stages, width, height);
        for y in f.y..f.y + f.h {
            mask[y * width + f.x..y * width + f.x + f.w].fill(true);
        }
    }
    mask
}
