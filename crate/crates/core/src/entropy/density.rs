//! Fully factorized per-channel density for quantized latents.
//!
//! Each channel owns a small monotone network mapping a real input to a CDF logit:
//! four stages of widths `1 -> 3 -> 3 -> 3 -> 1`, each `x <- softplus(H) x + b`
//! followed (except for the last stage) by the gate `x <- x + tanh(a) * tanh(x)`.
//! `softplus(H) > 0` and `|tanh(a)| < 1` keep every stage non-decreasing.

use rand::Rng;

use crate::error::{FlicError, Result};
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
pub const STAGES: usize = FILTERS.len() - 1;
/// Initial spread of a fresh density.
pub const INIT_SCALE: f64 = 10.0;
/// Floor applied to every likelihood.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedDensity {
    channels: usize,
    matrices: [ParamId; STAGES],
    biases: [ParamId; STAGES],
    factors: [ParamId; STAGES - 1],
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(u) - sigmoid(l)` without cancellation in the tails.
pub(crate) fn logistic_mass(upper: f64, lower: f64) -> f64 {
    let s = if upper + lower > 0.0 { -1.0 } else { 1.0 };
    (sigmoid(s * upper) - sigmoid(s * lower)).abs()
}

impl FactorizedDensity {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let scale = INIT_SCALE.powf(1.0 / STAGES as f64);
        let matrices = std::array::from_fn(|i| {
            let init = (1.0 / scale / FILTERS[i + 1] as f64).exp_m1().ln();
            store.add(
                format!("{name}.matrix{i}"),
                Tensor::full(&[channels, FILTERS[i + 1], FILTERS[i]], T::from_f64(init)),
            )
        });
        let biases = std::array::from_fn(|i| {
            let shape = [channels, FILTERS[i + 1]];
            let t = Tensor::from_fn(&shape, |_| T::from_f64(rng.random_range(-0.5..0.5)));
            store.add(format!("{name}.bias{i}"), t)
        });
        let factors = std::array::from_fn(|i| {
            store.add(
                format!("{name}.factor{i}"),
                Tensor::zeros(&[channels, FILTERS[i + 1]]),
            )
        });
        FactorizedDensity {
            channels,
            matrices,
            biases,
            factors,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.matrices
            .iter()
            .chain(&self.biases)
            .chain(&self.factors)
            .copied()
    }

    fn logits_with<'g, T: Real>(
        &self,
        weights: &[Var<'g, T>],
        gates: &[Var<'g, T>],
        p: &Bound<'g, T>,
        x: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let mut h = x.clone();
        for i in 0..STAGES {
            h = weights[i].channel_matmul(&h)?.add_prefix(&p[self.biases[i]])?;
            if i < STAGES - 1 {
                h = h.add(&h.tanh().mul_prefix(&gates[i])?)?;
            }
        }
        Ok(h)
    }

    /// CDF logits of a `[C, 1, N]` input.
    pub fn logits<'g, T: Real>(&self, p: &Bound<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let weights: Vec<_> = self.matrices.iter().map(|&m| p[m].softplus()).collect();
        let gates: Vec<_> = self.factors.iter().map(|&f| p[f].tanh()).collect();
        self.logits_with(&weights, &gates, p, x)
    }

    /// `p(y) = c(y + 1/2) - c(y - 1/2)` for a `[C, h, w]` latent, floored at 1e-9.
    pub fn likelihood<'g, T: Real>(&self, p: &Bound<'g, T>, y: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (c, h, w) = y.value().dims3()?;
        if c != self.channels {
            return Err(FlicError::invalid(format!(
                "density models {} channels, latent has {c}",
                self.channels
            )));
        }
        let flat = y.reshape(&[c, 1, h * w])?;
        let weights: Vec<_> = self.matrices.iter().map(|&m| p[m].softplus()).collect();
        let gates: Vec<_> = self.factors.iter().map(|&f| p[f].tanh()).collect();
        let half = T::from_f64(0.5);
        let upper = self.logits_with(&weights, &gates, p, &flat.offset(half))?;
        let lower = self.logits_with(&weights, &gates, p, &flat.offset(-half))?;
        y.graph()
            .sigmoid_diff(&upper, &lower)?
            .lower_bound(T::from_f64(LIKELIHOOD_FLOOR))
            .reshape(&[c, h, w])
    }

    /// Frozen `f64` copy of the reparameterised weights for table construction.
    pub fn snapshot<T: Real>(&self, store: &ParamStore<T>) -> DensitySnapshot {
        let vals = |id: ParamId| -> Vec<f64> { store.get(id).value().data().iter().map(|v| v.as_f64()).collect() };
        let channels = (0..self.channels)
            .map(|c| {
                let stages = (0..STAGES)
                    .map(|i| {
                        let (o, n) = (FILTERS[i + 1], FILTERS[i]);
                        let m = vals(self.matrices[i]);
                        let b = vals(self.biases[i]);
                        let gate = (i < STAGES - 1).then(|| {
                            let a = vals(self.factors[i]);
                            a[c * o..(c + 1) * o].iter().map(|v| v.tanh()).collect()
                        });
                        SnapshotStage {
                            weights: m[c * o * n..(c + 1) * o * n].iter().map(|&v| softplus(v)).collect(),
                            bias: b[c * o..(c + 1) * o].to_vec(),
                            gate,
                            inputs: n,
                        }
                    })
                    .collect();
                stages
            })
            .collect();
        DensitySnapshot { channels }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SnapshotStage {
    weights: Vec<f64>,
    bias: Vec<f64>,
    gate: Option<Vec<f64>>,
    inputs: usize,
}

/// Scalar evaluation of a [`FactorizedDensity`] in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensitySnapshot {
    channels: Vec<Vec<SnapshotStage>>,
}

impl DensitySnapshot {
    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    /// CDF logit of channel `c` at `x`.
    pub fn cdf_logit(&self, c: usize, x: f64) -> f64 {
        let mut h = vec![x];
        for stage in &self.channels[c] {
            let mut next: Vec<f64> = stage
                .bias
                .iter()
                .enumerate()
                .map(|(o, &b)| {
                    let row = &stage.weights[o * stage.inputs..(o + 1) * stage.inputs];
                    row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b
                })
                .collect();
            if let Some(gate) = &stage.gate {
                for (v, a) in next.iter_mut().zip(gate) {
                    *v += a * v.tanh();
                }
            }
            h = next;
        }
        h[0]
    }

    pub fn cdf(&self, c: usize, x: f64) -> f64 {
        sigmoid(self.cdf_logit(c, x))
    }

    /// Unfloored probability of integer symbol `s` in channel `c`.
    pub fn pmf(&self, c: usize, s: i32) -> f64 {
        let s = s as f64;
        logistic_mass(self.cdf_logit(c, s + 0.5), self.cdf_logit(c, s - 0.5))
    }

    /// Floored likelihood, matching [`FactorizedDensity::likelihood`].
    pub fn likelihood(&self, c: usize, s: i32) -> f64 {
        self.pmf(c, s).max(LIKELIHOOD_FLOOR)
    }
}

/// Total bits `sum(-log2 p)` of a likelihood tensor.
pub fn rate_bits<'g, T: Real>(likelihood: &Var<'g, T>) -> Var<'g, T> {
    likelihood.ln().sum().scale(T::from_f64(-std::f64::consts::LOG2_E))
}

/// Rate of the integer latent `y_hat` under `density` in bits.
pub fn estimate_bits<T: Real>(
    y_hat: &Tensor<T>,
    density: &FactorizedDensity,
    store: &ParamStore<T>,
) -> Result<f64> {
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let lik = density.likelihood(&p, &g.constant(y_hat.clone()))?;
    Ok(lik
        .value()
        .data()
        .iter()
        .map(|v| -v.as_f64().log2())
        .sum())
}
