//! Distortion and rate-quality metrics.

use std::sync::Arc;

use crate::error::{FlicError, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FlicError::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(1 / mse)` for `[0, 1]` data, capped at 100 dB.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Normalized 1-D Gaussian of `size` taps.
fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with a window clipped to the image, no padding.
fn blur<'g, T: Real>(x: &Var<'g, T>) -> Result<Var<'g, T>> {
    let (_, h, w) = x.value().dims3()?;
    let (kh, kw) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let gy = gaussian(kh, SSIM_SIGMA);
    let gx = gaussian(kw, SSIM_SIGMA);
    let ky = Tensor::new(&[kh, 1], gy.iter().map(|&v| T::from_f64(v)).collect())?;
    let kx = Tensor::new(&[1, kw], gx.iter().map(|&v| T::from_f64(v)).collect())?;
    x.depthwise(Arc::new(ky), 1)?.depthwise(Arc::new(kx), 1)
}

fn avg_pool2<'g, T: Real>(x: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.depthwise(Arc::new(Tensor::full(&[2, 2], T::from_f64(0.25))), 2)
}

/// `(mean SSIM, mean contrast-structure)` at one scale.
fn ssim_terms<'g, T: Real>(a: &Var<'g, T>, b: &Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let c1 = T::from_f64(SSIM_K1 * SSIM_K1);
    let c2 = T::from_f64(SSIM_K2 * SSIM_K2);
    let mu_a = blur(a)?;
    let mu_b = blur(b)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let s_aa = blur(&a.square())?.sub(&mu_aa)?;
    let s_bb = blur(&b.square())?.sub(&mu_bb)?;
    let s_ab = blur(&a.mul(b)?)?.sub(&mu_ab)?;
    let cs = s_ab
        .scale(T::from_f64(2.0))
        .offset(c2)
        .div(&s_aa.add(&s_bb)?.offset(c2))?;
    let lum = mu_ab
        .scale(T::from_f64(2.0))
        .offset(c1)
        .div(&mu_aa.add(&mu_bb)?.offset(c1))?;
    Ok((lum.mul(&cs)?.mean(), cs.mean()))
}

/// Differentiable 5-scale MS-SSIM of two `[C, H, W]` images in `[0, 1]`.
///
/// Gaussian windows shrink to the image at coarse scales; a scale is skipped once
/// the image can no longer be halved, and the remaining weights are renormalized.
pub fn ms_ssim_var<'g, T: Real>(a: &Var<'g, T>, b: &Var<'g, T>) -> Result<Var<'g, T>> {
    if a.shape() != b.shape() {
        return Err(FlicError::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (_, h, w) = a.value().dims3()?;
    let mut scales = 1;
    while scales < MS_SSIM_WEIGHTS.len() && (h >> scales) >= 1 && (w >> scales) >= 1 {
        scales += 1;
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let floor = T::from_f64(1e-6);
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut out: Option<Var<'g, T>> = None;
    for (j, &wj) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_terms(&a, &b)?;
        let last = j + 1 == scales;
        let term = if last { ssim } else { cs };
        let factor = term.clamp_min(floor).powf(T::from_f64(wj / total));
        out = Some(match out {
            Some(o) => o.mul(&factor)?,
            None => factor,
        });
        if !last {
            a = avg_pool2(&a)?;
            b = avg_pool2(&b)?;
        }
    }
    Ok(out.expect("at least one scale"))
}

pub fn ms_ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let g = Graph::no_grad();
    let v = ms_ssim_var(&g.constant(a.clone()), &g.constant(b.clone()))?;
    Ok(v.value().data()[0].as_f64())
}

/// Bjøntegaard delta rate of curve `b` against `a`, in percent.
///
/// Each curve is `(rate, quality)` points; `ln(rate)` is fitted by a cubic in quality
/// and the fits are integrated over the shared quality range.
pub fn bd_rate(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    for (name, c) in [("first", a), ("second", b)] {
        if c.len() < 4 {
            return Err(FlicError::invalid(format!("{name} curve needs at least 4 points, has {}", c.len())));
        }
        if c.iter().any(|&(r, q)| !(r > 0.0) || !r.is_finite() || !q.is_finite()) {
            return Err(FlicError::invalid(format!("{name} curve has a non-positive or non-finite point")));
        }
    }
    let range = |c: &[(f64, f64)]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, q)| (lo.min(q), hi.max(q)))
    };
    let (a_lo, a_hi) = range(a);
    let (b_lo, b_hi) = range(b);
    let lo = a_lo.max(b_lo);
    let hi = a_hi.min(b_hi);
    if hi <= lo {
        return Err(FlicError::invalid("rate-quality curves do not overlap in quality"));
    }
    let pa = fit_cubic(a)?;
    let pb = fit_cubic(b)?;
    let integral = |p: &[f64; 4]| {
        let prim = |x: f64| p[0] * x + p[1] * x * x / 2.0 + p[2] * x.powi(3) / 3.0 + p[3] * x.powi(4) / 4.0;
        prim(hi) - prim(lo)
    };
    let avg_diff = (integral(&pb) - integral(&pa)) / (hi - lo);
    Ok((avg_diff.exp() - 1.0) * 100.0)
}

/// Least-squares `ln(rate) = c0 + c1 q + c2 q^2 + c3 q^3`.
fn fit_cubic(points: &[(f64, f64)]) -> Result<[f64; 4]> {
    // Centre and scale the abscissa for conditioning, then map back.
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let spread = points.iter().map(|p| (p.1 - mean).abs()).fold(0.0, f64::max).max(1e-12);
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for &(r, q) in points {
        let t = (q - mean) / spread;
        let row = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            atb[i] += row[i] * r.ln();
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let c = solve4(ata, atb).ok_or_else(|| FlicError::invalid("curve qualities are degenerate for a cubic fit"))?;
    // Expand c(t) with t = (q - m) / s into powers of q.
    let (m, s) = (mean, spread);
    let d = [c[0], c[1] / s, c[2] / (s * s), c[3] / (s * s * s)];
    Ok([
        d[0] - d[1] * m + d[2] * m * m - d[3] * m * m * m,
        d[1] - 2.0 * d[2] * m + 3.0 * d[3] * m * m,
        d[2] - 3.0 * d[3] * m,
        d[3],
    ])
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
