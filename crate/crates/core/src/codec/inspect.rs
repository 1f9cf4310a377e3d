//! Channel mosaics of latent tensors.

use super::spectrum::GrayPlane;
use crate::error::Result;
use crate::numerics::{Real, Tensor};

/// Tiled grayscale view of the non-zero channels of a latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Mosaic {
    pub plane: GrayPlane,
    pub rows: usize,
    pub cols: usize,
    /// Source channel shown in each filled cell, in row-major cell order.
    pub channels: Vec<usize>,
}

impl Mosaic {
    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Drops all-zero channels, min-max normalizes each remaining channel (constant
/// channels become 0.5) and tiles them into a `ceil(sqrt(n))`-column grid.
/// Unused cells are black.
pub fn visualize_latent<T: Real>(latent: &Tensor<T>) -> Result<Mosaic> {
    let (c, h, w) = latent.dims3()?;
    let channels: Vec<usize> = (0..c)
        .filter(|&ch| latent.channel(ch).iter().any(|v| v.as_f64() != 0.0))
        .collect();
    let n = channels.len();
    if n == 0 {
        log::warn!("latent has no non-zero channels; mosaic is empty");
        return Ok(Mosaic {
            plane: GrayPlane {
                width: 0,
                height: 0,
                data: Vec::new(),
            },
            rows: 0,
            cols: 0,
            channels,
        });
    }
    let mut cols = 1;
    while cols * cols < n {
        cols += 1;
    }
    let rows = n.div_ceil(cols);
    let width = cols * w;
    let mut data = vec![0.0; rows * h * width];
    for (cell, &ch) in channels.iter().enumerate() {
        let plane = latent.channel(ch);
        let (lo, hi) = plane
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let (r, k) = (cell / cols, cell % cols);
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x].as_f64();
                data[(r * h + y) * width + k * w + x] = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            }
        }
    }
    Ok(Mosaic {
        plane: GrayPlane {
            width,
            height: rows * h,
            data,
        },
        rows,
        cols,
        channels,
    })
}
