//! Forward and adjoint kernels on raw tensors. The autodiff graph wraps these;
//! they are also used directly on inference-only paths.

use super::tensor::{Real, Tensor};
use crate::error::{FlicError, Result};

/// Output extent of a strided window with symmetric zero padding.
pub fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - k) / stride + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [cin, h, wd] = x[..] else {
            return Err(FlicError::invalid(format!(
                "conv2d input must be [C,H,W], got {x:?}"
            )));
        };
        let [cout, wcin, k, k2] = w[..] else {
            return Err(FlicError::invalid(format!(
                "conv2d weight must be [Cout,Cin,k,k], got {w:?}"
            )));
        };
        if wcin != cin {
            return Err(FlicError::invalid(format!(
                "conv2d channel mismatch: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if k != k2 || k == 0 {
            return Err(FlicError::invalid(format!(
                "conv2d kernel must be square, got {k}x{k2}"
            )));
        }
        if stride == 0 {
            return Err(FlicError::invalid("conv2d stride must be positive"));
        }
        if h + 2 * padding < k || wd + 2 * padding < k {
            return Err(FlicError::invalid(format!(
                "conv2d input {h}x{wd} smaller than kernel {k} with padding {padding}"
            )));
        }
        Ok(ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            padding,
            ho: conv_out_len(h, k, stride, padding),
            wo: conv_out_len(wd, k, stride, padding),
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    let pad = g.padding as isize;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.positions();
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    let pad = g.padding as isize;
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let kk = g.patch_len();
    let p = g.positions();
    let cols_owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        cols_owned = im2col(x.data(), g);
        &cols_owned
    };
    let mut out = vec![T::zero(); g.cout * p];
    T::gemm(
        g.cout,
        kk,
        p,
        w.data(),
        (kk as isize, 1),
        cols,
        (p as isize, 1),
        T::zero(),
        &mut out,
        (p as isize, 1),
    );
    Tensor::from_parts(vec![g.cout, g.ho, g.wo], out)
}

pub(crate) fn conv2d_backward_input<T: Real>(
    w: &Tensor<T>,
    grad: &Tensor<T>,
    g: &ConvGeom,
) -> Tensor<T> {
    let kk = g.patch_len();
    let p = g.positions();
    let mut dcols = vec![T::zero(); kk * p];
    T::gemm(
        kk,
        g.cout,
        p,
        w.data(),
        (1, kk as isize),
        grad.data(),
        (p as isize, 1),
        T::zero(),
        &mut dcols,
        (p as isize, 1),
    );
    let dx = if g.is_pointwise() {
        dcols
    } else {
        col2im(&dcols, g)
    };
    Tensor::from_parts(vec![g.cin, g.h, g.w], dx)
}

pub(crate) fn conv2d_backward_weight<T: Real>(
    x: &Tensor<T>,
    grad: &Tensor<T>,
    g: &ConvGeom,
) -> Tensor<T> {
    let kk = g.patch_len();
    let p = g.positions();
    let cols_owned;
    let cols: &[T] = if g.is_pointwise() {
        x.data()
    } else {
        cols_owned = im2col(x.data(), g);
        &cols_owned
    };
    let mut dw = vec![T::zero(); g.cout * kk];
    T::gemm(
        g.cout,
        p,
        kk,
        grad.data(),
        (p as isize, 1),
        cols,
        (1, p as isize),
        T::zero(),
        &mut dw,
        (kk as isize, 1),
    );
    Tensor::from_parts(vec![g.cout, g.cin, g.k, g.k], dw)
}

/// Depthwise strided correlation with one fixed `[kh, kw]` kernel shared by all channels,
/// no padding.
pub(crate) fn depthwise_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let [kh, kw] = kernel.shape()[..] else {
        return Err(FlicError::invalid("depthwise kernel must be 2-D"));
    };
    if h < kh || w < kw || stride == 0 {
        return Err(FlicError::invalid(format!(
            "depthwise filter {kh}x{kw} does not fit input {h}x{w}"
        )));
    }
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let k = kernel.data();
    let xd = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..kh {
                    let row = &plane[(oy * stride + ky) * w + ox * stride..];
                    for kx in 0..kw {
                        acc += k[ky * kw + kx] * row[kx];
                    }
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

pub(crate) fn depthwise_backward<T: Real>(
    in_shape: &[usize],
    kernel: &Tensor<T>,
    stride: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (ho, wo) = (grad.shape()[1], grad.shape()[2]);
    let k = kernel.data();
    let gd = grad.data();
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        let src = &gd[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = src[oy * wo + ox];
                for ky in 0..kh {
                    let base = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..kw {
                        plane[base + kx] += k[ky * kw + kx] * gv;
                    }
                }
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// Extends a `[C,H,W]` tensor at the bottom/right by repeating its last row/column.
pub(crate) fn pad_replicate_forward<T: Real>(
    x: &Tensor<T>,
    pad_h: usize,
    pad_w: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let (ho, wo) = (h + pad_h, w + pad_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            let row = &xd[ch * h * w + y.min(h - 1) * w..][..w];
            out.extend_from_slice(row);
            let last = row[w - 1];
            out.extend(std::iter::repeat_n(last, pad_w));
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

pub(crate) fn pad_replicate_backward<T: Real>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (grad.shape()[1], grad.shape()[2]);
    let gd = grad.data();
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                dx[ch * h * w + y.min(h - 1) * w + x.min(w - 1)] += gd[(ch * ho + y) * wo + x];
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// Top-left `[C, h, w]` window of a `[C,H,W]` tensor.
pub(crate) fn crop_forward<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, hi, wi) = x.dims3()?;
    if h == 0 || w == 0 || h > hi || w > wi {
        return Err(FlicError::invalid(format!(
            "cannot crop {hi}x{wi} to {h}x{w}"
        )));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&xd[(ch * hi + y) * wi..][..w]);
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

pub(crate) fn crop_backward<T: Real>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let (c, hi, wi) = (in_shape[0], in_shape[1], in_shape[2]);
    let (h, w) = (grad.shape()[1], grad.shape()[2]);
    let mut dx = vec![T::zero(); c * hi * wi];
    for ch in 0..c {
        for y in 0..h {
            dx[(ch * hi + y) * wi..][..w].copy_from_slice(&grad.data()[(ch * h + y) * w..][..w]);
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// `[4C, H, W] -> [C, 2H, 2W]` with `out[c, 2i+a, 2j+b] = in[4c + 2a + b, i, j]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c4, h, w) = x.dims3()?;
    if c4 % 4 != 0 {
        return Err(FlicError::invalid(format!(
            "pixel_shuffle needs a channel count divisible by 4, got {c4}"
        )));
    }
    let c = c4 / 4;
    let xd = x.data();
    let mut out = vec![T::zero(); c4 * h * w];
    let (ho, wo) = (2 * h, 2 * w);
    for ch in 0..c {
        for a in 0..2 {
            for b in 0..2 {
                let src = &xd[(4 * ch + 2 * a + b) * h * w..][..h * w];
                for i in 0..h {
                    for j in 0..w {
                        out[(ch * ho + 2 * i + a) * wo + 2 * j + b] = src[i * w + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}

/// Inverse of [`pixel_shuffle`]: `[C, 2H, 2W] -> [4C, H, W]`.
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, ho, wo) = x.dims3()?;
    if ho % 2 != 0 || wo % 2 != 0 {
        return Err(FlicError::invalid(format!(
            "pixel_unshuffle needs even spatial dims, got {ho}x{wo}"
        )));
    }
    let (h, w) = (ho / 2, wo / 2);
    let xd = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for a in 0..2 {
            for b in 0..2 {
                let dst = &mut out[(4 * ch + 2 * a + b) * h * w..][..h * w];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = xd[(ch * ho + 2 * i + a) * wo + 2 * j + b];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![4 * c, h, w], out))
}

/// Per-channel matrix product: `m[C,O,I] x x[C,I,N] -> [C,O,N]`.
pub(crate) fn channel_matmul_forward<T: Real>(m: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[c, o, i], &[cx, ix, n]) = (m.shape(), x.shape()) else {
        return Err(FlicError::invalid(format!(
            "channel_matmul expects [C,O,I] and [C,I,N], got {:?} and {:?}",
            m.shape(),
            x.shape()
        )));
    };
    if c != cx || i != ix {
        return Err(FlicError::invalid(format!(
            "channel_matmul shape mismatch: {:?} vs {:?}",
            m.shape(),
            x.shape()
        )));
    }
    let mut out = vec![T::zero(); c * o * n];
    for ch in 0..c {
        T::gemm(
            o,
            i,
            n,
            &m.data()[ch * o * i..][..o * i],
            (i as isize, 1),
            &x.data()[ch * i * n..][..i * n],
            (n as isize, 1),
            T::zero(),
            &mut out[ch * o * n..][..o * n],
            (n as isize, 1),
        );
    }
    Ok(Tensor::from_parts(vec![c, o, n], out))
}

pub(crate) fn channel_matmul_backward<T: Real>(
    m: &Tensor<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, o, i) = (m.shape()[0], m.shape()[1], m.shape()[2]);
    let n = x.shape()[2];
    let mut dm = vec![T::zero(); c * o * i];
    let mut dx = vec![T::zero(); c * i * n];
    for ch in 0..c {
        let g = &grad.data()[ch * o * n..][..o * n];
        let xs = &x.data()[ch * i * n..][..i * n];
        let ms = &m.data()[ch * o * i..][..o * i];
        T::gemm(
            o,
            n,
            i,
            g,
            (n as isize, 1),
            xs,
            (1, n as isize),
            T::zero(),
            &mut dm[ch * o * i..][..o * i],
            (i as isize, 1),
        );
        T::gemm(
            i,
            o,
            n,
            ms,
            (1, i as isize),
            g,
            (n as isize, 1),
            T::zero(),
            &mut dx[ch * i * n..][..i * n],
            (n as isize, 1),
        );
    }
    (
        Tensor::from_parts(m.shape().to_vec(), dm),
        Tensor::from_parts(x.shape().to_vec(), dx),
    )
}

/// Number of trailing elements each prefix-broadcast value covers.
pub(crate) fn prefix_inner(x: &[usize], v: &[usize]) -> Result<usize> {
    if v.len() > x.len() || x[..v.len()] != *v {
        return Err(FlicError::invalid(format!(
            "shape {v:?} is not a prefix of {x:?}"
        )));
    }
    Ok(x[v.len()..].iter().product())
}
