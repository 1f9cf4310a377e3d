//! Training images, random crops and the batch producer.

use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::image::RgbImage;
use crate::error::{FlicError, Result};
use crate::numerics::Tensor;

/// Smooth colour gradients overlaid with hard-edged rectangles and a diagonal edge.
pub fn synthetic_image(size: usize, rng: &mut impl Rng) -> RgbImage {
    let mut px = vec![[0.0f64; 3]; size * size];
    let base: [f64; 3] = rng.random();
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            px[y * size + x] = std::array::from_fn(|c| base[c] + gx[c] * x as f64 / s + gy[c] * y as f64 / s);
        }
    }
    for _ in 0..rng.random_range(1..=4) {
        let (x0, y0) = (rng.random_range(0..size), rng.random_range(0..size));
        let (w, h) = (rng.random_range(2..=size / 2), rng.random_range(2..=size / 2));
        let colour: [f64; 3] = rng.random();
        for y in y0..(y0 + h).min(size) {
            for x in x0..(x0 + w).min(size) {
                px[y * size + x] = colour;
            }
        }
    }
    // Half plane a*x + b*y > c shifted in brightness.
    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let c = rng.random_range(-0.5..0.5) * s;
    let shift = rng.random_range(-0.3..0.3);
    for y in 0..size {
        for x in 0..size {
            if a * x as f64 + b * y as f64 > c {
                px[y * size + x].iter_mut().for_each(|v| *v += shift);
            }
        }
    }
    let data = px
        .iter()
        .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    RgbImage::new(size, size, data).expect("consistent size")
}

pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(size, &mut rng)).collect()
}

/// Every PPM/PNG file directly inside `dir`, in file-name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<RgbImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["ppm", "png"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let images = paths.iter().map(RgbImage::read).collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(FlicError::invalid(format!("no PPM or PNG images in {}", dir.as_ref().display())));
    }
    Ok(images)
}

/// Random `size x size` crop as a `[3, size, size]` tensor.
pub fn random_crop(image: &RgbImage, size: usize, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (w, h) = (image.width(), image.height());
    if w < size || h < size {
        return Err(FlicError::invalid(format!("{w}x{h} image is smaller than the {size}px crop")));
    }
    let (x0, y0) = (rng.random_range(0..=w - size), rng.random_range(0..=h - size));
    let plane = size * size;
    Ok(Tensor::from_fn(&[3, size, size], |i| {
        let (c, y, x) = (i / plane, (i % plane) / size, i % size);
        image.pixel(x0 + x, y0 + y)[c] as f32 / 255.0
    }))
}

/// Splits a `[B, 3, H, W]` batch into its images.
pub fn unbatch(batch: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let s = batch.shape();
    if s.len() != 4 {
        return Err(FlicError::invalid(format!("expected a [B, C, H, W] batch, got {s:?}")));
    }
    let n = s[1] * s[2] * s[3];
    batch
        .data()
        .chunks_exact(n)
        .map(|d| Tensor::new(&s[1..], d.to_vec()))
        .collect()
}

/// One batch and the epoch it belongs to (0-based).
pub struct Batch {
    pub epoch: usize,
    pub last_of_epoch: bool,
    pub images: Tensor<f32>,
}

/// Epoch plan: a fresh permutation of the images per epoch, cut into batches of
/// `batch` (the last one may be shorter), each image randomly cropped.
pub struct BatchStream {
    images: Vec<RgbImage>,
    batch: usize,
    crop: usize,
    rng: ChaCha8Rng,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(images: Vec<RgbImage>, batch: usize, crop: usize, rng: ChaCha8Rng) -> Result<Self> {
        if images.is_empty() {
            return Err(FlicError::invalid("training needs at least one image"));
        }
        if batch == 0 || crop == 0 {
            return Err(FlicError::invalid("batch size and crop size must be positive"));
        }
        if let Some(img) = images.iter().find(|i| i.width() < crop || i.height() < crop) {
            return Err(FlicError::invalid(format!(
                "{}x{} image is smaller than the {crop}px crop",
                img.width(),
                img.height()
            )));
        }
        let mut s = BatchStream {
            images,
            batch,
            crop,
            rng,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.images.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.images.len().div_ceil(self.batch)
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let mut data = Vec::with_capacity((end - self.pos) * 3 * self.crop * self.crop);
        for &i in &self.order[self.pos..end] {
            data.extend(random_crop(&self.images[i], self.crop, &mut self.rng)?.into_data());
        }
        let n = end - self.pos;
        self.pos = end;
        Ok(Batch {
            epoch: self.epoch,
            last_of_epoch: end == self.order.len(),
            images: Tensor::new(&[n, 3, self.crop, self.crop], data)?,
        })
    }

    /// Moves the stream to a worker thread that stays at most `depth` batches ahead.
    /// Batches arrive in the same order as from [`BatchStream::next_batch`].
    pub fn spawn(mut self, count: usize, depth: usize) -> (Receiver<Result<Batch>>, JoinHandle<()>) {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || {
            for _ in 0..count {
                let b = self.next_batch();
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    return;
                }
            }
        });
        (rx, handle)
    }
}
