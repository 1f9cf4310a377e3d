//! Two-layer container: header, base chunk (`Y^L`) and an enhancement (`Y^H`) that is
//! either one chunk for the whole latent or a list of independently coded tiles.
//!
//! All integers are little-endian.

use crate::bytes::Reader;
use crate::entropy::{decode_latent, encode_latent, CodedChunk};
use crate::error::{FlicError, Result};
use crate::model::FlicModel;
use crate::numerics::{Real, Tensor};
use crate::roi::{LatentRect, RoiSet};

pub const MAGIC: &[u8; 4] = b"FLIC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
/// Bytes of tile framing in front of each tile's chunk.
pub const TILE_HEADER_LEN: usize = 8;

const FLAG_BASE: u8 = 1;
const FLAG_ENHANCEMENT: u8 = 2;
const FLAG_TILED: u8 = 4;
const MAX_STAGES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: u32,
    pub height: u32,
    pub latent_h: u16,
    pub latent_w: u16,
    pub channels_low: u16,
    pub channels_high: u16,
    pub model_id: [u8; 8],
}

impl Header {
    /// Number of 2x downsampling stages implied by the image and latent dims.
    pub fn stages(&self) -> Option<usize> {
        let (h, w) = (self.height as u64, self.width as u64);
        (1..=MAX_STAGES).find(|&s| {
            let f = 1u64 << s;
            h >= f && w >= f && h.div_ceil(f) == self.latent_h as u64 && w.div_ceil(f) == self.latent_w as u64
        })
    }

    pub fn latent_shape_low(&self) -> [usize; 3] {
        [self.channels_low as usize, self.latent_h as usize, self.latent_w as usize]
    }

    pub fn latent_shape_high(&self) -> [usize; 3] {
        [self.channels_high as usize, self.latent_h as usize, self.latent_w as usize]
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiTile {
    pub rect: LatentRect,
    /// `Y^H` restricted to `rect`, all channels.
    pub chunk: CodedChunk,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Enhancement {
    Absent,
    Full(CodedChunk),
    Tiled(Vec<RoiTile>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub header: Header,
    pub base: Option<CodedChunk>,
    pub enhancement: Enhancement,
}

impl Container {
    pub fn flags(&self) -> u8 {
        let mut f = 0;
        if self.base.is_some() {
            f |= FLAG_BASE;
        }
        match self.enhancement {
            Enhancement::Absent => {}
            Enhancement::Full(_) => f |= FLAG_ENHANCEMENT,
            Enhancement::Tiled(_) => f |= FLAG_ENHANCEMENT | FLAG_TILED,
        }
        f
    }

    /// Payload bytes of the base chunk.
    pub fn base_payload_len(&self) -> usize {
        self.base.as_ref().map_or(0, |c| c.payload.len())
    }

    /// Payload bytes of the enhancement (all tiles together when tiled).
    pub fn enhancement_payload_len(&self) -> usize {
        match &self.enhancement {
            Enhancement::Absent => 0,
            Enhancement::Full(c) => c.payload.len(),
            Enhancement::Tiled(tiles) => tiles.iter().map(|t| t.chunk.payload.len()).sum(),
        }
    }

    /// Checks the structural invariants that [`Container::parse`] enforces.
    pub fn validate(&self) -> Result<()> {
        check_header(&self.header, 0)?;
        if let Some(b) = &self.base {
            check_chunk_channels(b, self.header.channels_low, 0)?;
        }
        match &self.enhancement {
            Enhancement::Absent => {}
            Enhancement::Full(c) => check_chunk_channels(c, self.header.channels_high, 0)?,
            Enhancement::Tiled(tiles) => {
                if tiles.len() > u16::MAX as usize {
                    return Err(FlicError::invalid("too many tiles"));
                }
                let mut seen: Vec<LatentRect> = Vec::with_capacity(tiles.len());
                for t in tiles {
                    check_tile(&self.header, &t.rect, &seen, 0)?;
                    check_chunk_channels(&t.chunk, self.header.channels_high, 0)?;
                    seen.push(t.rect);
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.base_payload_len() + self.enhancement_payload_len() + 64);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.flags());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.latent_h.to_le_bytes());
        out.extend_from_slice(&h.latent_w.to_le_bytes());
        out.extend_from_slice(&h.channels_low.to_le_bytes());
        out.extend_from_slice(&h.channels_high.to_le_bytes());
        out.extend_from_slice(&h.model_id);
        if let Some(b) = &self.base {
            b.write(&mut out);
        }
        match &self.enhancement {
            Enhancement::Absent => {}
            Enhancement::Full(c) => c.write(&mut out),
            Enhancement::Tiled(tiles) => {
                out.extend_from_slice(&(tiles.len() as u16).to_le_bytes());
                for t in tiles {
                    for v in [t.rect.y0, t.rect.x0, t.rect.h, t.rect.w] {
                        out.extend_from_slice(&(v as u16).to_le_bytes());
                    }
                    t.chunk.write(&mut out);
                }
            }
        }
        Ok(out)
    }

    /// Total parse: every input yields a container or a format error with a byte offset.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(FlicError::format(0, "bad magic, not a FLIC container"));
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(FlicError::format(4, format!("unsupported container version {version}")));
        }
        let flags = r.u8("flags")?;
        if flags & !(FLAG_BASE | FLAG_ENHANCEMENT | FLAG_TILED) != 0 {
            return Err(FlicError::format(5, format!("unknown flag bits in {flags:#04x}")));
        }
        if flags & FLAG_TILED != 0 && flags & FLAG_ENHANCEMENT == 0 {
            return Err(FlicError::format(5, "tiled flag set without an enhancement layer"));
        }
        let header = Header {
            width: r.u32("width")?,
            height: r.u32("height")?,
            latent_h: r.u16("latent height")?,
            latent_w: r.u16("latent width")?,
            channels_low: r.u16("low channel count")?,
            channels_high: r.u16("high channel count")?,
            model_id: r.array("model id")?,
        };
        check_header(&header, 6)?;

        let base = if flags & FLAG_BASE != 0 {
            let at = r.offset();
            let c = CodedChunk::read(&mut r)?;
            check_chunk_channels(&c, header.channels_low, at)?;
            Some(c)
        } else {
            None
        };
        let enhancement = if flags & FLAG_ENHANCEMENT == 0 {
            Enhancement::Absent
        } else if flags & FLAG_TILED == 0 {
            let at = r.offset();
            let c = CodedChunk::read(&mut r)?;
            check_chunk_channels(&c, header.channels_high, at)?;
            Enhancement::Full(c)
        } else {
            let n = r.u16("tile count")? as usize;
            let mut tiles: Vec<RoiTile> = Vec::with_capacity(n.min(r.remaining() / TILE_HEADER_LEN));
            let mut seen = Vec::with_capacity(tiles.capacity());
            for _ in 0..n {
                let at = r.offset();
                let rect = LatentRect {
                    y0: r.u16("tile y0")? as usize,
                    x0: r.u16("tile x0")? as usize,
                    h: r.u16("tile height")? as usize,
                    w: r.u16("tile width")? as usize,
                };
                check_tile(&header, &rect, &seen, at)?;
                let chunk_at = r.offset();
                let chunk = CodedChunk::read(&mut r)?;
                check_chunk_channels(&chunk, header.channels_high, chunk_at)?;
                seen.push(rect);
                tiles.push(RoiTile { rect, chunk });
            }
            Enhancement::Tiled(tiles)
        };
        if r.remaining() != 0 {
            return Err(r.error(format!("{} trailing bytes after the container", r.remaining())));
        }
        Ok(Container {
            header,
            base,
            enhancement,
        })
    }
}

fn check_header(h: &Header, at: usize) -> Result<()> {
    if h.width == 0 || h.height == 0 || h.latent_h == 0 || h.latent_w == 0 {
        return Err(FlicError::format(at, "zero image or latent dimension"));
    }
    if h.channels_low == 0 || h.channels_high == 0 {
        return Err(FlicError::format(at, "zero latent channel count"));
    }
    if h.stages().is_none() {
        return Err(FlicError::format(
            at,
            format!(
                "latent {}x{} is not a power-of-two reduction of a {}x{} image",
                h.latent_h, h.latent_w, h.height, h.width
            ),
        ));
    }
    Ok(())
}

fn check_chunk_channels(c: &CodedChunk, expected: u16, at: usize) -> Result<()> {
    if c.channels() != expected as usize {
        return Err(FlicError::format(
            at,
            format!("chunk has {} channels, header says {expected}", c.channels()),
        ));
    }
    Ok(())
}

fn check_tile(h: &Header, rect: &LatentRect, seen: &[LatentRect], at: usize) -> Result<()> {
    if !rect.within(h.latent_h as usize, h.latent_w as usize) {
        return Err(FlicError::format(
            at,
            format!("tile {rect:?} is empty or outside the {}x{} latent", h.latent_h, h.latent_w),
        ));
    }
    if let Some(o) = seen.iter().find(|o| o.overlaps(rect)) {
        return Err(FlicError::format(at, format!("tile {rect:?} overlaps tile {o:?}")));
    }
    Ok(())
}

/// `t[:, rect]` of a `[C, h, w]` tensor.
pub fn crop_latent<T: Real>(t: &Tensor<T>, rect: &LatentRect) -> Result<Tensor<T>> {
    let (c, h, w) = t.dims3()?;
    if !rect.within(h, w) {
        return Err(FlicError::invalid(format!("{rect:?} outside a {h}x{w} latent")));
    }
    let mut out = Vec::with_capacity(c * rect.area());
    for ch in 0..c {
        let plane = t.channel(ch);
        for y in rect.y0..rect.y1() {
            out.extend_from_slice(&plane[y * w + rect.x0..y * w + rect.x1()]);
        }
    }
    Tensor::new(&[c, rect.h, rect.w], out)
}

/// Writes `tile` into `t[:, rect]`.
pub fn paste_latent<T: Real>(t: &mut Tensor<T>, rect: &LatentRect, tile: &Tensor<T>) -> Result<()> {
    let (c, h, w) = t.dims3()?;
    if !rect.within(h, w) || tile.shape() != [c, rect.h, rect.w] {
        return Err(FlicError::invalid(format!(
            "cannot paste {:?} at {rect:?} into {:?}",
            tile.shape(),
            t.shape()
        )));
    }
    let data = t.data_mut();
    for ch in 0..c {
        for (i, y) in (rect.y0..rect.y1()).enumerate() {
            let src = &tile.data()[(ch * rect.h + i) * rect.w..(ch * rect.h + i + 1) * rect.w];
            data[(ch * h + y) * w + rect.x0..(ch * h + y) * w + rect.x1()].copy_from_slice(src);
        }
    }
    Ok(())
}

/// Codes `Y^H` restricted to each rectangle as an independent tile.
pub fn encode_tiles<T: Real>(y_high: &Tensor<T>, rects: &[LatentRect], model: &FlicModel<T>) -> Result<Vec<RoiTile>> {
    let density = model.density_high().snapshot(model.params());
    rects
        .iter()
        .map(|rect| {
            Ok(RoiTile {
                rect: *rect,
                chunk: encode_latent(&crop_latent(y_high, rect)?, &density)?,
            })
        })
        .collect()
}

/// Decodes the base layer; `None` when the container has no base chunk.
pub fn decode_base<T: Real>(c: &Container, model: &FlicModel<T>) -> Result<Option<Tensor<T>>> {
    check_model(&c.header, model)?;
    let density = model.density_low().snapshot(model.params());
    c.base
        .as_ref()
        .map(|b| decode_latent(b, &density, c.header.latent_shape_low()))
        .transpose()
}

/// Decodes the enhancement layer into a full `Y^H` tensor: the full chunk, or the
/// tiles pasted into zeros. `None` when there is no enhancement layer.
pub fn decode_enhancement<T: Real>(c: &Container, model: &FlicModel<T>) -> Result<Option<Tensor<T>>> {
    check_model(&c.header, model)?;
    let density = model.density_high().snapshot(model.params());
    let shape = c.header.latent_shape_high();
    match &c.enhancement {
        Enhancement::Absent => Ok(None),
        Enhancement::Full(chunk) => decode_latent(chunk, &density, shape).map(Some),
        Enhancement::Tiled(tiles) => {
            let mut y = Tensor::zeros(&shape);
            for t in tiles {
                let tile = decode_latent(&t.chunk, &density, [shape[0], t.rect.h, t.rect.w])?;
                paste_latent(&mut y, &t.rect, &tile)?;
            }
            Ok(Some(y))
        }
    }
}

/// Fails unless the container was produced with `model`'s weights.
pub fn check_model<T: Real>(h: &Header, model: &FlicModel<T>) -> Result<()> {
    let found = model.model_id();
    if h.model_id != found {
        return Err(FlicError::ModelMismatch {
            expected: crate::model::model_id_hex(&h.model_id),
            found: crate::model::model_id_hex(&found),
        });
    }
    let cfg = model.config();
    if h.stages() != Some(cfg.stages())
        || h.channels_low as usize != cfg.latent_channels()
        || h.channels_high as usize != cfg.latent_channels()
    {
        return Err(FlicError::invalid("container dimensions do not match the model configuration"));
    }
    Ok(())
}

/// Replaces a full enhancement by independently coded tiles covering `rois`.
///
/// Overlapping rectangles are merged into disjoint latent tiles.
pub fn extract_roi<T: Real>(c: &Container, rois: &RoiSet, model: &FlicModel<T>) -> Result<Container> {
    if !matches!(c.enhancement, Enhancement::Full(_)) {
        return Err(FlicError::invalid("ROI extraction needs a container with a full enhancement layer"));
    }
    let h = &c.header;
    rois.validate(h.width as usize, h.height as usize)?;
    let y_high = decode_enhancement(c, model)?.expect("full enhancement present");
    let mask = rois.mask(model.config().factor(), h.latent_h as usize, h.latent_w as usize);
    Ok(Container {
        header: c.header,
        base: c.base.clone(),
        enhancement: Enhancement::Tiled(encode_tiles(&y_high, &mask.rectangles(), model)?),
    })
}
