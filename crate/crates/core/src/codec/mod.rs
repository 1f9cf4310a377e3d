//! Image-level encode/decode, reconstruction modes and inspection tools.

pub mod image;
pub mod inspect;
pub mod metrics;
pub mod receptive;
pub mod spectrum;

use std::fmt;

use crate::bitstream::{check_model, decode_base, decode_enhancement, Container, Enhancement, Header};
use crate::entropy::{encode_latent, quantize, QuantMode};
use crate::error::{FlicError, Result};
use crate::model::{FlicModel, LatentPair};
use crate::numerics::{Real, Tensor};
use crate::roi::RoiSet;

pub use image::RgbImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Both layers.
    Full,
    /// Base layer only, `Y^H = 0`.
    Base,
    /// Base layer plus the enhancement restricted to the ROI cells.
    Roi(RoiSet),
}

/// Rates of one encoded image. `bpp_*` count entropy-coded payload bits only;
/// `bpp_container` counts every byte of the serialized container.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeReport {
    pub width: usize,
    pub height: usize,
    pub base_bytes: usize,
    pub enhancement_bytes: usize,
    pub container_bytes: usize,
    pub bpp_base: f64,
    pub bpp_enh: f64,
    pub bpp_total: f64,
    pub bpp_container: f64,
}

impl EncodeReport {
    pub fn new(c: &Container) -> Result<Self> {
        let pixels = c.header.pixels() as f64;
        let base_bytes = c.base_payload_len();
        let enhancement_bytes = c.enhancement_payload_len();
        let container_bytes = c.to_bytes()?.len();
        Ok(EncodeReport {
            width: c.header.width as usize,
            height: c.header.height as usize,
            base_bytes,
            enhancement_bytes,
            container_bytes,
            bpp_base: 8.0 * base_bytes as f64 / pixels,
            bpp_enh: 8.0 * enhancement_bytes as f64 / pixels,
            bpp_total: 8.0 * (base_bytes + enhancement_bytes) as f64 / pixels,
            bpp_container: 8.0 * container_bytes as f64 / pixels,
        })
    }
}

impl fmt::Display for EncodeReport {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "width={}", self.width)?;
        writeln!(f, "height={}", self.height)?;
        writeln!(f, "base_bytes={}", self.base_bytes)?;
        writeln!(f, "enhancement_bytes={}", self.enhancement_bytes)?;
        writeln!(f, "container_bytes={}", self.container_bytes)?;
        writeln!(f, "bpp_base={:.6}", self.bpp_base)?;
        writeln!(f, "bpp_enh={:.6}", self.bpp_enh)?;
        writeln!(f, "bpp_total={:.6}", self.bpp_total)?;
        write!(f, "bpp_container={:.6}", self.bpp_container)
    }
}

/// `round(analyze(x))` for a `[3, H, W]` image in `[0, 1]`.
pub fn quantized_latents<T: Real>(x: &Tensor<T>, model: &FlicModel<T>) -> Result<LatentPair<T>> {
    let y = model.analyze(x)?;
    LatentPair::new(quantize(&y.low, QuantMode::Round, None)?, quantize(&y.high, QuantMode::Round, None)?)
}

/// Codes rounded latents of an image of the given size into a container with a
/// full enhancement layer.
pub fn encode_latents<T: Real>(
    latents: &LatentPair<T>,
    width: usize,
    height: usize,
    model: &FlicModel<T>,
) -> Result<Container> {
    let (c, h, w) = latents.dims();
    if model.config().latent_dims(height, width) != (h, w) || c != model.config().latent_channels() {
        return Err(FlicError::invalid(format!(
            "latents {:?} do not belong to a {width}x{height} image under this model",
            latents.low.shape()
        )));
    }
    let too_big = || FlicError::invalid(format!("{width}x{height} image is too large for the container"));
    let header = Header {
        width: u32::try_from(width).map_err(|_| too_big())?,
        height: u32::try_from(height).map_err(|_| too_big())?,
        latent_h: u16::try_from(h).map_err(|_| too_big())?,
        latent_w: u16::try_from(w).map_err(|_| too_big())?,
        channels_low: c as u16,
        channels_high: c as u16,
        model_id: model.model_id(),
    };
    let (low, high) = model.snapshots();
    Ok(Container {
        header,
        base: Some(encode_latent(&latents.low, &low)?),
        enhancement: Enhancement::Full(encode_latent(&latents.high, &high)?),
    })
}

pub fn encode_tensor<T: Real>(x: &Tensor<T>, model: &FlicModel<T>) -> Result<Container> {
    let (_, h, w) = x.dims3()?;
    encode_latents(&quantized_latents(x, model)?, w, h, model)
}

pub fn encode_image<T: Real>(image: &RgbImage, model: &FlicModel<T>) -> Result<(Container, EncodeReport)> {
    let c = encode_tensor(&image.to_tensor(), model)?;
    let report = EncodeReport::new(&c)?;
    Ok((c, report))
}

/// The latent pair a decoder synthesizes from in `mode`.
pub fn decode_latents<T: Real>(c: &Container, mode: &DecodeMode, model: &FlicModel<T>) -> Result<LatentPair<T>> {
    check_model(&c.header, model)?;
    let low = decode_base(c, model)?.ok_or_else(|| FlicError::invalid("container has no base layer"))?;
    let high = match mode {
        DecodeMode::Base => Tensor::zeros(&c.header.latent_shape_high()),
        DecodeMode::Full => {
            if matches!(c.enhancement, Enhancement::Tiled(_)) {
                return Err(FlicError::invalid(
                    "container carries ROI tiles only; decode it in ROI or base mode",
                ));
            }
            decode_enhancement(c, model)?
                .ok_or_else(|| FlicError::invalid("full decoding needs an enhancement layer"))?
        }
        DecodeMode::Roi(rois) => {
            let h = &c.header;
            rois.validate(h.width as usize, h.height as usize)?;
            let mut y = decode_enhancement(c, model)?
                .ok_or_else(|| FlicError::invalid("ROI decoding needs an enhancement layer"))?;
            let (ch, lh, lw) = y.dims3()?;
            let mask = rois.mask(model.config().factor(), lh, lw);
            let data = y.data_mut();
            for k in 0..ch {
                for i in 0..lh {
                    for j in 0..lw {
                        if !mask.get(i, j) {
                            data[(k * lh + i) * lw + j] = T::zero();
                        }
                    }
                }
            }
            y
        }
    };
    LatentPair::new(low, high)
}

/// Unclamped reconstruction `[3, H, W]`.
pub fn decode_tensor<T: Real>(c: &Container, mode: &DecodeMode, model: &FlicModel<T>) -> Result<Tensor<T>> {
    let latents = decode_latents(c, mode, model)?;
    model.synthesize(&latents, c.header.height as usize, c.header.width as usize)
}

pub fn decode_image<T: Real>(c: &Container, mode: &DecodeMode, model: &FlicModel<T>) -> Result<RgbImage> {
    RgbImage::from_tensor(&decode_tensor(c, mode, model)?)
}
