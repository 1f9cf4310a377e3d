//! 8-bit RGB images with binary PPM and PNG I/O.

use std::io::Write;
use std::path::Path;

use crate::error::{FlicError, Result};
use crate::numerics::{Real, Tensor};

/// Interleaved 8-bit RGB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(FlicError::invalid(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[3, H, W]` tensor with values `v / 255`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let scale = T::from_f64(1.0 / 255.0);
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            T::from_f64(self.data[3 * (i % plane) + i / plane] as f64) * scale
        })
    }

    /// Clamps to `[0, 1]` and rounds to 8 bits.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(FlicError::invalid(format!("expected 3 channels, got {c}")));
        }
        let plane = h * w;
        let mut data = vec![0; 3 * plane];
        for (i, v) in t.data().iter().enumerate() {
            data[3 * (i % plane) + i / plane] = to_u8(v.as_f64());
        }
        RgbImage::new(w, h, data)
    }

    /// Single-channel `[1, H, W]` tensor rendered as gray.
    pub fn from_gray<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 1 {
            return Err(FlicError::invalid(format!("expected 1 channel, got {c}")));
        }
        let data = t.data().iter().flat_map(|v| [to_u8(v.as_f64()); 3]).collect();
        RgbImage::new(w, h, data)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Binary PPM (`P6`, maxval 255).
    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(FlicError::format(pos, "truncated PPM header"));
            }
            fields.push((start, &bytes[start..pos]));
        }
        if fields[0].1 != b"P6" {
            return Err(FlicError::format(0, "not a binary PPM (P6) file"));
        }
        let num = |(at, f): (usize, &[u8])| -> Result<usize> {
            std::str::from_utf8(f)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FlicError::format(at, "invalid number in PPM header"))
        };
        let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(FlicError::format(fields[3].0, format!("unsupported PPM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() {
            return Err(FlicError::format(pos, "truncated PPM header"));
        }
        pos += 1;
        let n = w
            .checked_mul(h)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| FlicError::format(fields[1].0, "PPM dimensions overflow"))?;
        if w == 0 || h == 0 {
            return Err(FlicError::format(fields[1].0, "PPM has a zero dimension"));
        }
        if bytes.len() - pos < n {
            return Err(FlicError::format(bytes.len(), format!("PPM raster truncated: need {n} bytes")));
        }
        RgbImage::new(w, h, bytes[pos..pos + n].to_vec())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(png_err)?;
            writer.write_image_data(&self.data).map_err(png_err)?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(png_err)?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| FlicError::format(0, "PNG too large"))?];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let buf = &buf[..info.buffer_size()];
        let data = match info.color_type {
            png::ColorType::Rgb => buf.to_vec(),
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g; 3]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
            other => return Err(FlicError::format(0, format!("unsupported PNG color type {other:?}"))),
        };
        RgbImage::new(w, h, data)
    }

    /// Reads PPM or PNG, chosen by content.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"\x89PNG") {
            Self::from_png(bytes)
        } else {
            Self::from_ppm(bytes)
        }
    }

    /// Writes PNG for a `.png` extension, PPM otherwise.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => self.to_png()?,
            _ => self.to_ppm(),
        };
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn png_err(e: impl std::fmt::Display) -> FlicError {
    FlicError::format(0, format!("PNG: {e}"))
}
