//! Log-magnitude Fourier views of images.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::image::RgbImage;
use crate::error::{FlicError, Result};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major grayscale plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayPlane {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_image(&self) -> Result<RgbImage> {
        let data = self
            .data
            .iter()
            .flat_map(|&v| [(v.clamp(0.0, 1.0) * 255.0).round() as u8; 3])
            .collect();
        RgbImage::new(self.width, self.height, data)
    }
}

/// Luma in `[0, 1]`.
pub fn luma(image: &RgbImage) -> GrayPlane {
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| (0..3).map(|c| LUMA_WEIGHTS[c] * p[c] as f64).sum::<f64>() / 255.0)
        .collect();
    GrayPlane {
        width: image.width(),
        height: image.height(),
        data,
    }
}

/// Unnormalized 2-D DFT of a row-major `height x width` plane.
pub fn fft2(data: &[f64], height: usize, width: usize) -> Result<Vec<Complex64>> {
    if data.len() != height * width || data.is_empty() {
        return Err(FlicError::invalid(format!(
            "{} samples do not form a {height}x{width} plane",
            data.len()
        )));
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let rows = planner.plan_fft_forward(width);
    for row in buf.chunks_exact_mut(width) {
        rows.process(row);
    }
    let cols = planner.plan_fft_forward(height);
    let mut col = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        cols.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    Ok(buf)
}

/// Centered `log(1 + |F|)` of the zero-padded luma, scaled to `[0, 1]`.
///
/// The output is `2^a x 2^b`, the next powers of two at or above the image size.
pub fn spectrum(image: &RgbImage) -> Result<GrayPlane> {
    let y = luma(image);
    let (w, h) = (y.width.next_power_of_two(), y.height.next_power_of_two());
    let mut padded = vec![0.0; w * h];
    for row in 0..y.height {
        padded[row * w..row * w + y.width].copy_from_slice(&y.data[row * y.width..(row + 1) * y.width]);
    }
    let f = fft2(&padded, h, w)?;
    let mut data = vec![0.0; w * h];
    for (i, v) in f.iter().enumerate() {
        let (fy, fx) = (i / w, i % w);
        data[((fy + h / 2) % h) * w + (fx + w / 2) % w] = v.norm().ln_1p();
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v /= max);
    }
    Ok(GrayPlane { width: w, height: h, data })
}
