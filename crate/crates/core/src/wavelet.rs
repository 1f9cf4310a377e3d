//! Fixed 2x2 Haar filtering with stride 2.
//!
//! `LL` and `HH` drive the inter-frequency updates of the analysis layers. The full
//! four-band analysis/synthesis pair is an orthonormal filter bank kept as a reference
//! for those two filters.

use std::sync::Arc;

use crate::error::{FlicError, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HaarBand {
    LL,
    LH,
    HL,
    HH,
}

impl HaarBand {
    pub const ALL: [HaarBand; 4] = [HaarBand::LL, HaarBand::LH, HaarBand::HL, HaarBand::HH];
}

/// A 2x2 Haar kernel. Coefficients are constants and never trained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarKernel {
    band: HaarBand,
    coefficients: [[f64; 2]; 2],
}

impl HaarKernel {
    pub const fn new(band: HaarBand) -> Self {
        let coefficients = match band {
            HaarBand::LL => [[0.5, 0.5], [0.5, 0.5]],
            HaarBand::LH => [[0.5, 0.5], [-0.5, -0.5]],
            HaarBand::HL => [[0.5, -0.5], [0.5, -0.5]],
            HaarBand::HH => [[0.5, -0.5], [-0.5, 0.5]],
        };
        HaarKernel { band, coefficients }
    }

    pub fn band(&self) -> HaarBand {
        self.band
    }

    pub fn coefficients(&self) -> [[f64; 2]; 2] {
        self.coefficients
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let c = self.coefficients;
        Tensor::from_parts(
            vec![2, 2],
            [c[0][0], c[0][1], c[1][0], c[1][1]]
                .iter()
                .map(|&v| T::from_f64(v))
                .collect(),
        )
    }
}

/// Depthwise 2x2 stride-2 Haar filtering of a `[C,H,W]` variable.
///
/// Odd heights or widths are first extended by replicating the last row/column, so the
/// output is `[C, ceil(H/2), ceil(W/2)]`.
pub fn haar_filter<'g, T: Real>(x: &Var<'g, T>, band: HaarBand) -> Result<Var<'g, T>> {
    let (_, h, w) = x.value().dims3()?;
    let padded = x.pad_replicate(h % 2, w % 2)?;
    padded.depthwise(Arc::new(HaarKernel::new(band).to_tensor()), 2)
}

/// [`haar_filter`] on a plain tensor.
pub fn haar_filter_tensor<T: Real>(x: &Tensor<T>, band: HaarBand) -> Result<Tensor<T>> {
    let g = Graph::no_grad();
    let out = haar_filter(&g.constant(x.clone()), band)?;
    Ok(out.value().clone())
}

/// The four Haar sub-bands of a `[C,H,W]` tensor, each `[C,H/2,W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarBands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Real> HaarBands<T> {
    pub fn band(&self, band: HaarBand) -> &Tensor<T> {
        match band {
            HaarBand::LL => &self.ll,
            HaarBand::LH => &self.lh,
            HaarBand::HL => &self.hl,
            HaarBand::HH => &self.hh,
        }
    }

    pub fn energy(&self) -> T {
        HaarBand::ALL
            .iter()
            .map(|&b| self.band(b).data().iter().map(|&v| v * v).sum::<T>())
            .sum()
    }
}

pub fn haar_analysis4<T: Real>(x: &Tensor<T>) -> Result<HaarBands<T>> {
    let (_, h, w) = x.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(FlicError::invalid(format!(
            "four-band Haar analysis needs even dims, got {h}x{w}"
        )));
    }
    Ok(HaarBands {
        ll: haar_filter_tensor(x, HaarBand::LL)?,
        lh: haar_filter_tensor(x, HaarBand::LH)?,
        hl: haar_filter_tensor(x, HaarBand::HL)?,
        hh: haar_filter_tensor(x, HaarBand::HH)?,
    })
}

/// Inverse of [`haar_analysis4`]. The bank is orthonormal, so synthesis applies the
/// transposed kernels with the same 1/2 scaling.
pub fn haar_synthesis4<T: Real>(bands: &HaarBands<T>) -> Result<Tensor<T>> {
    let shape = bands.ll.shape();
    let (c, h, w) = bands.ll.dims3()?;
    for b in [&bands.lh, &bands.hl, &bands.hh] {
        if b.shape() != shape {
            return Err(FlicError::invalid(format!(
                "Haar band shape mismatch: {:?} vs {:?}",
                b.shape(),
                shape
            )));
        }
    }
    let kernels = HaarBand::ALL.map(|b| (HaarKernel::new(b).coefficients(), bands.band(b).data()));
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let idx = (ch * h + i) * w + j;
                for a in 0..2 {
                    for b in 0..2 {
                        let mut acc = T::zero();
                        for (k, data) in &kernels {
                            acc += T::from_f64(k[a][b]) * data[idx];
                        }
                        out[(ch * ho + 2 * i + a) * wo + 2 * j + b] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(&[c, ho, wo], out)
}
