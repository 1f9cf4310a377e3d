//! Rate-distortion loss with the base-reconstruction term.

use rand::RngCore;

use crate::codec::metrics::ms_ssim_var;
use crate::entropy::{quantize_var, rate_bits, QuantMode};
use crate::error::{FlicError, Result};
use crate::model::FlicModel;
use crate::numerics::{Bound, Graph, Real, Tensor, Var};

/// Scale applied to MSE on `[0, 1]` data so the `lambda` grid matches 8-bit units.
pub const MSE_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// `255^2 * MSE`.
    Mse,
    /// `1 - MS-SSIM`.
    MsSsim,
}

impl std::str::FromStr for Metric {
    type Err = FlicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "ms_ssim" | "ms-ssim" => Ok(Metric::MsSsim),
            _ => Err(FlicError::invalid(format!("unknown metric {s:?}, expected mse or ms_ssim"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Mse => "mse",
            Metric::MsSsim => "ms_ssim",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub metric: Metric,
}

impl LossConfig {
    pub fn new(lambda: f64, alpha: f64, metric: Metric) -> Result<Self> {
        let cfg = LossConfig { lambda, alpha, metric };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FlicError::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FlicError::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `lambda = 2^n * 10^-2` for `n` in `3..=-3`.
    pub fn lambda_grid() -> Vec<f64> {
        (-3..=3).rev().map(|n| 2f64.powi(n) * 1e-2).collect()
    }

    pub fn alpha_grid() -> Vec<f64> {
        vec![0.1, 0.01, 0.001, 0.0001, 0.0]
    }
}

/// Scalar parts of one loss evaluation. Rates are in bits per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossParts {
    pub rate_low: f64,
    pub rate_high: f64,
    pub dist_full: f64,
    pub dist_base: f64,
    pub total: f64,
}

impl LossParts {
    /// `(rate + lambda * dist_full) + lambda * alpha * dist_base`.
    pub fn combine(rate_low: f64, rate_high: f64, dist_full: f64, dist_base: f64, cfg: &LossConfig) -> Self {
        LossParts {
            rate_low,
            rate_high,
            dist_full,
            dist_base,
            total: (rate_low + rate_high + cfg.lambda * dist_full) + cfg.lambda * cfg.alpha * dist_base,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate_low + self.rate_high
    }

    /// Element-wise mean.
    pub fn mean(parts: &[LossParts]) -> LossParts {
        let n = parts.len().max(1) as f64;
        let sum = |f: fn(&LossParts) -> f64| parts.iter().map(f).sum::<f64>() / n;
        LossParts {
            rate_low: sum(|p| p.rate_low),
            rate_high: sum(|p| p.rate_high),
            dist_full: sum(|p| p.dist_full),
            dist_base: sum(|p| p.dist_base),
            total: sum(|p| p.total),
        }
    }
}

pub fn distortion_var<'g, T: Real>(x: &Var<'g, T>, x_hat: &Var<'g, T>, metric: Metric) -> Result<Var<'g, T>> {
    match metric {
        Metric::Mse => Ok(x.sub(x_hat)?.square().mean().scale(T::from_f64(MSE_SCALE))),
        Metric::MsSsim => Ok(ms_ssim_var(x, x_hat)?.scale(T::from_f64(-1.0)).offset(T::one())),
    }
}

/// Loss of one `[3, H, W]` image on graph `g` with parameters `p`.
///
/// `Noise` quantization is the training mode and needs `rng`. The base
/// reconstruction reuses the quantized `Y^L` with `Y^H` zeroed. With `alpha == 0`
/// the base term is evaluated off the graph, so it reports a value but carries no
/// gradient.
pub fn loss_var<'g, T: Real>(
    g: &'g Graph<T>,
    p: &Bound<'g, T>,
    model: &FlicModel<T>,
    x: &Var<'g, T>,
    cfg: &LossConfig,
    mode: QuantMode,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(Var<'g, T>, LossParts)> {
    cfg.validate()?;
    let (_, h, w) = x.value().dims3()?;
    let pixels = (h * w) as f64;
    let y = model.analyze_var(p, x, None)?;
    let low = quantize_var(&y.low, mode, reborrow(&mut rng))?;
    let high = quantize_var(&y.high, mode, reborrow(&mut rng))?;
    let (lik_low, lik_high) = model.likelihoods(p, &low, &high)?;
    let inv_pixels = T::from_f64(1.0 / pixels);
    let rate_low = rate_bits(&lik_low).scale(inv_pixels);
    let rate_high = rate_bits(&lik_high).scale(inv_pixels);

    let x_hat = model.synthesize_var(p, &low, &high, h, w)?;
    let dist_full = distortion_var(x, &x_hat, cfg.metric)?;

    let zeros = Tensor::zeros(high.shape());
    let lambda = T::from_f64(cfg.lambda);
    let mut total = rate_low.add(&rate_high)?.add(&dist_full.scale(lambda))?;
    let dist_base = if cfg.alpha > 0.0 {
        let base = model.synthesize_var(p, &low, &g.constant(zeros), h, w)?;
        let d = distortion_var(x, &base, cfg.metric)?;
        total = total.add(&d.scale(T::from_f64(cfg.lambda * cfg.alpha)))?;
        scalar(&d)
    } else {
        let ng = Graph::no_grad();
        let np = model.params().bind(&ng);
        let base = model.synthesize_var(&np, &ng.constant(low.value().clone()), &ng.constant(zeros), h, w)?;
        scalar(&distortion_var(&ng.constant(x.value().clone()), &base, cfg.metric)?)
    };
    let parts = LossParts::combine(scalar(&rate_low), scalar(&rate_high), scalar(&dist_full), dist_base, cfg);
    Ok((total, parts))
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn scalar<T: Real>(v: &Var<'_, T>) -> f64 {
    v.value().data()[0].as_f64()
}

/// Loss parts of one image at the model's current weights, without gradients.
pub fn evaluate_loss<T: Real>(
    model: &FlicModel<T>,
    image: &Tensor<T>,
    cfg: &LossConfig,
    mode: QuantMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<LossParts> {
    let g = Graph::no_grad();
    let p = model.params().bind(&g);
    Ok(loss_var(&g, &p, model, &g.constant(image.clone()), cfg, mode, rng)?.1)
}
