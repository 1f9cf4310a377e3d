//! Image-space regions of interest and their footprint on the latent grid.

use crate::error::{FlicError, Result};

/// Pixel rectangle `(x, y, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl ImageRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        ImageRect { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        ImageRect::new(0, 0, width, height)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let fits = self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|e| e <= width)
            && self.y.checked_add(self.h).is_some_and(|e| e <= height);
        if !fits {
            return Err(FlicError::invalid(format!(
                "ROI {self:?} is empty or outside the {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Latent cells touched by the rectangle: start rounded down, end rounded up.
    pub fn to_latent(&self, factor: usize) -> LatentRect {
        let y0 = self.y / factor;
        let x0 = self.x / factor;
        LatentRect {
            y0,
            x0,
            h: (self.y + self.h).div_ceil(factor) - y0,
            w: (self.x + self.w).div_ceil(factor) - x0,
        }
    }
}

impl std::str::FromStr for ImageRect {
    type Err = FlicError;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| FlicError::invalid(format!("ROI {s:?} is not x,y,w,h")))?;
        match parts[..] {
            [x, y, w, h] => Ok(ImageRect::new(x, y, w, h)),
            _ => Err(FlicError::invalid(format!("ROI {s:?} is not x,y,w,h"))),
        }
    }
}

/// Rectangle of latent cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatentRect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl LatentRect {
    pub fn area(&self) -> usize {
        self.h * self.w
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn overlaps(&self, other: &LatentRect) -> bool {
        self.y0 < other.y1() && other.y0 < self.y1() && self.x0 < other.x1() && other.x0 < self.x1()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1()).contains(&y) && (self.x0..self.x1()).contains(&x)
    }

    pub fn within(&self, h: usize, w: usize) -> bool {
        self.h > 0 && self.w > 0 && self.y1() <= h && self.x1() <= w
    }
}

/// Boolean occupancy of an `h x w` latent grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    h: usize,
    w: usize,
    cells: Vec<bool>,
}

impl CellMask {
    pub fn new(h: usize, w: usize) -> Self {
        CellMask {
            h,
            w,
            cells: vec![false; h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_full(&self) -> bool {
        self.cells.iter().all(|&c| c)
    }

    pub fn insert(&mut self, r: &LatentRect) {
        for y in r.y0..r.y1().min(self.h) {
            for x in r.x0..r.x1().min(self.w) {
                self.cells[y * self.w + x] = true;
            }
        }
    }

    /// Cells set here but not in `other`.
    pub fn difference(&self, other: &CellMask) -> CellMask {
        CellMask {
            h: self.h,
            w: self.w,
            cells: self.cells.iter().zip(&other.cells).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn union_with(&mut self, other: &CellMask) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }

    /// Deterministic cover by disjoint rectangles: maximal horizontal runs per row,
    /// merged downward while the run below is identical.
    pub fn rectangles(&self) -> Vec<LatentRect> {
        let runs = |y: usize| -> Vec<(usize, usize)> {
            let mut out = Vec::new();
            let mut x = 0;
            while x < self.w {
                if self.get(y, x) {
                    let start = x;
                    while x < self.w && self.get(y, x) {
                        x += 1;
                    }
                    out.push((start, x - start));
                } else {
                    x += 1;
                }
            }
            out
        };
        let mut open: Vec<LatentRect> = Vec::new();
        let mut done = Vec::new();
        for y in 0..self.h {
            let row = runs(y);
            let mut next = Vec::with_capacity(row.len());
            for (x0, w) in row {
                match open.iter().position(|r| r.x0 == x0 && r.w == w) {
                    Some(i) => {
                        let mut r = open.swap_remove(i);
                        r.h += 1;
                        next.push(r);
                    }
                    None => next.push(LatentRect { y0: y, x0, h: 1, w }),
                }
            }
            done.append(&mut open);
            open = next;
        }
        done.append(&mut open);
        done.sort();
        done
    }
}

/// Non-empty list of image rectangles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiSet {
    rects: Vec<ImageRect>,
}

impl RoiSet {
    pub fn new(rects: Vec<ImageRect>) -> Result<Self> {
        if rects.is_empty() {
            return Err(FlicError::invalid("an ROI set needs at least one rectangle"));
        }
        Ok(RoiSet { rects })
    }

    pub fn rects(&self) -> &[ImageRect] {
        &self.rects
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        self.rects.iter().try_for_each(|r| r.validate(width, height))
    }

    /// Latent cells covered by any rectangle of an image whose grid is `h x w`.
    pub fn mask(&self, factor: usize, h: usize, w: usize) -> CellMask {
        let mut m = CellMask::new(h, w);
        for r in &self.rects {
            m.insert(&r.to_latent(factor));
        }
        m
    }
}
