//! Rate and quality of base and full decoding across (lambda, alpha) settings.

use std::fmt::Write as _;

use super::config::TrainConfig;
use super::train::train;
use crate::codec::image::RgbImage;
use crate::codec::metrics::psnr;
use crate::codec::{decode_tensor, encode_image, DecodeMode};
use crate::error::{FlicError, Result};
use crate::model::FlicModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub alpha: f64,
    pub bpp_base: f64,
    pub bpp_enh: f64,
    pub psnr_full: f64,
    pub psnr_base: f64,
}

impl SweepCell {
    /// Share of the payload spent on the base layer.
    pub fn base_fraction(&self) -> f64 {
        self.bpp_base / (self.bpp_base + self.bpp_enh)
    }
}

/// Averages rates and PSNRs of coding `images` with `model`.
pub fn evaluate_model(model: &FlicModel<f32>, images: &[RgbImage], lambda: f64, alpha: f64) -> Result<SweepCell> {
    if images.is_empty() {
        return Err(FlicError::invalid("evaluation needs at least one image"));
    }
    let mut cell = SweepCell {
        lambda,
        alpha,
        bpp_base: 0.0,
        bpp_enh: 0.0,
        psnr_full: 0.0,
        psnr_base: 0.0,
    };
    for img in images {
        let (c, report) = encode_image(img, model)?;
        let x = img.to_tensor::<f32>();
        let quantized = |mode| -> Result<_> { Ok(RgbImage::from_tensor(&decode_tensor(&c, &mode, model)?)?.to_tensor::<f32>()) };
        cell.bpp_base += report.bpp_base;
        cell.bpp_enh += report.bpp_enh;
        cell.psnr_full += psnr(&x, &quantized(DecodeMode::Full)?)?;
        cell.psnr_base += psnr(&x, &quantized(DecodeMode::Base)?)?;
    }
    let n = images.len() as f64;
    cell.bpp_base /= n;
    cell.bpp_enh /= n;
    cell.psnr_full /= n;
    cell.psnr_base /= n;
    Ok(cell)
}

/// Trains one model per `(lambda, alpha)` with otherwise identical settings and
/// evaluates it on `held_out`.
pub fn alpha_sweep(
    base: &TrainConfig,
    train_set: &[RgbImage],
    held_out: &[RgbImage],
    lambdas: &[f64],
    alphas: &[f64],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(lambdas.len() * alphas.len());
    for &lambda in lambdas {
        for &alpha in alphas {
            let cfg = TrainConfig {
                lambda,
                alpha,
                ..base.clone()
            };
            let out = train(&cfg, train_set.to_vec(), &[], None, |_| {})?;
            let cell = evaluate_model(&out.model, held_out, lambda, alpha)?;
            log::info!("lambda {lambda} alpha {alpha}: {cell:?}");
            cells.push(cell);
        }
    }
    Ok(cells)
}

pub const SWEEP_HEADER: &str = "lambda,alpha,bpp_base,bpp_enh,bpp_total,base_fraction,psnr_full,psnr_base";

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    for c in cells {
        let _ = write!(
            s,
            "\n{},{},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            c.lambda,
            c.alpha,
            c.bpp_base,
            c.bpp_enh,
            c.bpp_base + c.bpp_enh,
            c.base_fraction(),
            c.psnr_full,
            c.psnr_base
        );
    }
    s.push('\n');
    s
}

/// Fixed-width table of the same columns.
pub fn sweep_table(cells: &[SweepCell]) -> String {
    let mut s = format!(
        "{:>8} {:>7} {:>9} {:>9} {:>9} {:>7} {:>9} {:>9}\n",
        "lambda", "alpha", "bpp_base", "bpp_enh", "bpp", "base%", "psnr", "psnr_b"
    );
    for c in cells {
        let _ = writeln!(
            s,
            "{:>8.5} {:>7.4} {:>9.4} {:>9.4} {:>9.4} {:>7.2} {:>9.3} {:>9.3}",
            c.lambda,
            c.alpha,
            c.bpp_base,
            c.bpp_enh,
            c.bpp_base + c.bpp_enh,
            100.0 * c.base_fraction(),
            c.psnr_full,
            c.psnr_base
        );
    }
    s
}
