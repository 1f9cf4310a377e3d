//! Factorized entropy model and rANS coding of quantized latents.

mod chunk;
mod density;
mod rans;
mod tables;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use chunk::{ans_decode, ans_encode, decode_latent, encode_latent, CodedChunk};
pub use density::{
    estimate_bits, rate_bits, DensitySnapshot, FactorizedDensity, FILTERS, INIT_SCALE, LIKELIHOOD_FLOOR,
    STAGES,
};
pub use rans::{rans_decode, rans_encode};
pub use tables::{
    build_cdf_tables, symbol_ranges, widen_ranges, CdfTable, ChannelCdf, MAX_SYMBOLS, PRECISION_BITS, TAIL_MASS,
    TOTAL_FREQ,
};

use crate::error::{FlicError, Result};
use crate::numerics::{Adam, Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Round half away from zero.
    Round,
    /// Additive `U(-1/2, 1/2)` noise.
    Noise,
}

/// Quantizes a tensor; `Noise` needs an rng.
pub fn quantize<T: Real>(y: &Tensor<T>, mode: QuantMode, rng: Option<&mut dyn RngCore>) -> Result<Tensor<T>> {
    match mode {
        QuantMode::Round => Ok(y.map(|v| v.round())),
        QuantMode::Noise => {
            let rng = rng.ok_or_else(|| FlicError::invalid("noise quantization needs an rng"))?;
            let mut out = y.clone();
            for v in out.data_mut() {
                *v = *v + T::from_f64(rng.random_range(-0.5..0.5));
            }
            Ok(out)
        }
    }
}

/// Graph version of [`quantize`]. The gradient passes through unchanged in both modes
/// (straight-through for `Round`).
pub fn quantize_var<'g, T: Real>(
    y: &Var<'g, T>,
    mode: QuantMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var<'g, T>> {
    let q = quantize(y.value(), mode, rng)?;
    let delta = q.zip_map(y.value(), |a, b| a - b)?;
    y.add(&y.graph().constant(delta))
}

/// Settings for [`fit_density`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    /// Independent initializations; each channel keeps its best one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 1500,
            lr: 0.1,
            restarts: 4,
            seed: 0,
        }
    }
}

fn fit_once<T: Real>(y_hat: &Tensor<T>, cfg: &FitConfig, seed: u64) -> Result<(ParamStore<T>, FactorizedDensity, Vec<f64>)> {
    let (c, h, w) = y_hat.dims3()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let density = FactorizedDensity::new(&mut store, "density", c, &mut rng);
    let adam = Adam::with_lr(cfg.lr);
    let n = T::from_f64(1.0 / y_hat.len() as f64);
    let y = std::sync::Arc::new(y_hat.clone());
    for _ in 0..cfg.steps {
        let g = Graph::new();
        let p = store.bind(&g);
        let lik = density.likelihood(&p, &g.constant_shared(y.clone()))?;
        let grads = g.backward(&rate_bits(&lik).scale(n))?;
        store.accumulate(&p, &grads)?;
        drop(p);
        adam.step(store.params_mut());
    }
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let lik = density.likelihood(&p, &g.constant_shared(y))?;
    let bits = lik
        .value()
        .data()
        .chunks(h * w)
        .map(|ch| ch.iter().map(|v| -v.as_f64().log2()).sum())
        .collect();
    drop(p);
    Ok((store, density, bits))
}

/// Fits a fresh density to an integer `[C, h, w]` latent by maximum likelihood.
///
/// Returns the store holding the density parameters and the density itself.
pub fn fit_density<T: Real>(y_hat: &Tensor<T>, cfg: &FitConfig) -> Result<(ParamStore<T>, FactorizedDensity)> {
    let (mut store, density, mut best) = fit_once(y_hat, cfg, cfg.seed)?;
    for r in 1..cfg.restarts {
        let (other, _, bits) = fit_once(y_hat, cfg, cfg.seed.wrapping_add(r as u64))?;
        for (c, &b) in bits.iter().enumerate() {
            if b < best[c] {
                best[c] = b;
                for id in density.param_ids() {
                    let src = other.get(id).value();
                    let per = src.len() / bits.len();
                    store.get_mut(id).value_mut().data_mut()[c * per..(c + 1) * per]
                        .copy_from_slice(&src.data()[c * per..(c + 1) * per]);
                }
            }
        }
    }
    Ok((store, density))
}
