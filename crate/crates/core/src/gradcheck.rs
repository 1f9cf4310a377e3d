//! Finite-difference gradient checking with a fourth-order central stencil.
//!
//! Used by the test suites as an oracle that only relies on forward evaluation.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};

/// Relative errors below this denominator are measured against it instead, so that
/// near-zero gradients are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = rel;
            self.worst = Some((input, elem, analytic, numeric));
        }
    }
}

/// Compares the analytic gradient of the scalar `f(inputs)` with the five-point
/// central difference `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
///
/// At most `max_elems` randomly chosen elements of each input are perturbed (all of
/// them when the input is smaller).
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    eps: f64,
    max_elems: usize,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(&out)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::no_grad();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.value().data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(var) {
            Some(t) => t,
            None => {
                zeros = Tensor::zeros(var.shape());
                &zeros
            }
        };
        let n = inputs[i].len();
        let elems: Vec<usize> = if n <= max_elems {
            (0..n).collect()
        } else {
            sample(&mut rng, n, max_elems).into_vec()
        };
        for e in elems {
            let orig = work[i].data()[e];
            let numeric = five_point(eps, |offset| {
                work[i].data_mut()[e] = orig + offset;
                eval(&work)
            })?;
            work[i].data_mut()[e] = orig;
            report.record(i, e, analytic.data()[e], numeric);
        }
    }
    Ok(report)
}

fn five_point(eps: f64, mut at: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let near = at(eps)? - at(-eps)?;
    let far = at(2.0 * eps)? - at(-2.0 * eps)?;
    Ok((8.0 * near - far) / (12.0 * eps))
}

/// Checks the derivative of `f` along one random unit-variance direction per input,
/// `grad . v` against the five-point difference of `t -> f(x + t v)`.
///
/// The step starts at `eps` and grows, up to `100 * eps`, until the first-order change
/// of `f` is at least `1e-11 * |f|`, which keeps small directional derivatives clear
/// of round-off. The report has one entry per input, with element index 0.
pub fn check_directional<F>(inputs: &[Tensor<f64>], eps: f64, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(&out)?;
    let level = out.value().data()[0].abs();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::no_grad();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.value().data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let dir: Vec<f64> = (0..inputs[i].len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let analytic = grads
            .get(var)
            .map_or(0.0, |t| t.data().iter().zip(&dir).map(|(g, d)| g * d).sum());
        let step = (1e-11 * level / analytic.abs()).max(eps).min(100.0 * eps);
        let numeric = five_point(step, |t| {
            for ((w, &x), d) in work[i].data_mut().iter_mut().zip(inputs[i].data()).zip(&dir) {
                *w = x + t * d;
            }
            eval(&work)
        })?;
        work[i] = inputs[i].clone();
        report.record(i, 0, analytic, numeric);
    }
    Ok(report)
}
