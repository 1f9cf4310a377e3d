//! Encoded images held in memory and the ROI enhancement they have received.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use flic_core::bitstream::{decode_enhancement, encode_tiles, Container, Enhancement, RoiTile};
use flic_core::codec::metrics::psnr;
use flic_core::codec::{decode_image, encode_image, DecodeMode, EncodeReport, RgbImage};
use flic_core::model::FlicModel;
use flic_core::numerics::Tensor;
use flic_core::roi::{CellMask, ImageRect, RoiSet};
use flic_core::{FlicError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub struct Session {
    pub id: String,
    /// Container with the full enhancement layer.
    pub container: Container,
    pub report: EncodeReport,
    pub original: RgbImage,
    pub base: RgbImage,
    pub current: RgbImage,
    rois: Vec<ImageRect>,
    y_high: Tensor<f32>,
    sent_cells: CellMask,
    sent_tiles: Vec<RoiTile>,
    sent_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub bpp_base: f64,
    pub bpp_enh_total: f64,
    pub bpp_enh_sent: f64,
    pub rois: Vec<[usize; 4]>,
    pub psnr_base: f64,
    pub psnr_current: f64,
    pub psnr_full: f64,
}

/// Result of one enhancement request.
pub struct Enhanced {
    pub delta_bytes: usize,
    pub new_tiles: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Base,
    Current,
    Full,
}

impl std::str::FromStr for View {
    type Err = FlicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(View::Base),
            "current" => Ok(View::Current),
            "full" => Ok(View::Full),
            _ => Err(FlicError::InvalidArgument(format!("unknown mode {s:?}, expected base, current or full"))),
        }
    }
}

fn rect_array(r: &ImageRect) -> [usize; 4] {
    [r.x, r.y, r.w, r.h]
}

impl Session {
    pub fn create(id: String, image: RgbImage, model: &FlicModel<f32>) -> Result<Self> {
        let (container, report) = encode_image(&image, model)?;
        let base = decode_image(&container, &DecodeMode::Base, model)?;
        let y_high = decode_enhancement(&container, model)?.expect("fresh container has an enhancement layer");
        let h = &container.header;
        let sent_cells = CellMask::new(h.latent_h as usize, h.latent_w as usize);
        Ok(Session {
            id,
            report,
            original: image,
            current: base.clone(),
            base,
            rois: Vec::new(),
            y_high,
            sent_cells,
            sent_tiles: Vec::new(),
            sent_bytes: 0,
            container,
        })
    }

    pub fn width(&self) -> usize {
        self.report.width
    }

    pub fn height(&self) -> usize {
        self.report.height
    }

    pub fn rois(&self) -> &[ImageRect] {
        &self.rois
    }

    fn bpp(&self, bytes: usize) -> f64 {
        8.0 * bytes as f64 / (self.width() * self.height()) as f64
    }

    pub fn bpp_enh_sent(&self) -> f64 {
        self.bpp(self.sent_bytes)
    }

    pub fn delta_bpp(&self, delta_bytes: usize) -> f64 {
        self.bpp(delta_bytes)
    }

    /// Container holding exactly the tiles sent so far.
    pub fn sent_container(&self) -> Container {
        Container {
            header: self.container.header,
            base: self.container.base.clone(),
            enhancement: Enhancement::Tiled(self.sent_tiles.clone()),
        }
    }

    /// Adds `rects` to the accumulated ROIs, codes only latent cells not sent
    /// before and redecodes the current view.
    pub fn enhance(&mut self, rects: &[ImageRect], model: &FlicModel<f32>) -> Result<Enhanced> {
        let request = RoiSet::new(rects.to_vec())?;
        request.validate(self.width(), self.height())?;
        let (lh, lw) = self.sent_cells.dims();
        let factor = model.config().factor();
        let fresh = request.mask(factor, lh, lw).difference(&self.sent_cells);
        let tiles = encode_tiles(&self.y_high, &fresh.rectangles(), model)?;
        let delta_bytes = tiles.iter().map(|t| t.chunk.payload.len()).sum();
        for r in rects {
            if !self.rois.contains(r) {
                self.rois.push(*r);
            }
        }
        let new_tiles = tiles.len();
        if new_tiles > 0 {
            self.sent_tiles.extend(tiles);
            self.sent_tiles.sort_by_key(|t| t.rect);
            self.sent_cells.union_with(&fresh);
            self.sent_bytes += delta_bytes;
            let all = RoiSet::new(self.rois.clone())?;
            self.current = decode_image(&self.sent_container(), &DecodeMode::Roi(all), model)?;
        }
        Ok(Enhanced { delta_bytes, new_tiles })
    }

    pub fn view(&self, view: View, model: &FlicModel<f32>) -> Result<RgbImage> {
        match view {
            View::Base => Ok(self.base.clone()),
            View::Current => Ok(self.current.clone()),
            View::Full => decode_image(&self.container, &DecodeMode::Full, model),
        }
    }

    pub fn stats(&self, model: &FlicModel<f32>) -> Result<Stats> {
        let x = self.original.to_tensor::<f64>();
        let full = self.view(View::Full, model)?;
        Ok(Stats {
            id: self.id.clone(),
            width: self.width(),
            height: self.height(),
            bpp_base: self.report.bpp_base,
            bpp_enh_total: self.report.bpp_enh,
            bpp_enh_sent: self.bpp_enh_sent(),
            rois: self.rois.iter().map(rect_array).collect(),
            psnr_base: psnr(&x, &self.base.to_tensor())?,
            psnr_current: psnr(&x, &self.current.to_tensor())?,
            psnr_full: psnr(&x, &full.to_tensor())?,
        })
    }
}

pub type SharedSession = Arc<Mutex<Session>>;

struct Slot {
    session: SharedSession,
    last_used: u64,
}

/// Sessions by id, evicting the least recently used beyond `capacity`.
pub struct SessionStore {
    capacity: usize,
    clock: u64,
    slots: HashMap<String, Slot>,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        SessionStore {
            capacity: capacity.max(1),
            clock: 0,
            slots: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// A fresh random id not currently in use.
    pub fn new_id(&self) -> String {
        let mut rng = rand::rng();
        loop {
            let id = format!("{:016x}", rng.random::<u64>());
            if !self.slots.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn insert(&mut self, session: Session) -> SharedSession {
        self.clock += 1;
        let id = session.id.clone();
        let shared = Arc::new(Mutex::new(session));
        self.slots.insert(
            id,
            Slot {
                session: shared.clone(),
                last_used: self.clock,
            },
        );
        while self.slots.len() > self.capacity {
            let oldest = self
                .slots
                .iter()
                .min_by_key(|(_, s)| s.last_used)
                .map(|(k, _)| k.clone())
                .expect("store is not empty");
            log::info!("evicting session {oldest}");
            self.slots.remove(&oldest);
        }
        shared
    }

    pub fn get(&mut self, id: &str) -> Option<SharedSession> {
        self.clock += 1;
        let now = self.clock;
        self.slots.get_mut(id).map(|s| {
            s.last_used = now;
            s.session.clone()
        })
    }
}
