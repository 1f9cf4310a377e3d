//! Finite-difference checks of every differentiable building block, in 64-bit.
//! Shared by the crate's gradient tests and the acceptance run.

use flic_core::entropy::{FactorizedDensity, QuantMode};
use flic_core::gradcheck::{check_directional, check_gradients, GradCheckReport};
use flic_core::layers::{gdn, igdn, Boundary, Direction, Gdn, OctaveIo, OctaveLayer, PairVar, ResidualBlock};
use flic_core::model::{FlicConfig, FlicModel};
use flic_core::numerics::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use flic_core::training::{loss_var, LossConfig, Metric};
use flic_core::wavelet::{haar_filter, HaarBand};
use flic_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
/// Whole-tensor directions move many activations at once, so the step is smaller.
pub const DIRECTIONAL_EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random values bounded away from zero, so kinks at the origin are never crossed.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// `sum(w * y)` with fixed random weights `w`, so every output element matters differently.
fn project<'g>(g: &'g Graph<f64>, y: &Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(y.shape(), &mut rng);
    Ok(y.mul(&g.constant(w))?.sum())
}

fn ids(store: &ParamStore<f64>) -> Vec<ParamId> {
    store.iter().map(|p| store.find(p.name()).expect("own name")).collect()
}

/// Checks `f` with respect to `extra` inputs and every parameter of `store`.
fn check_with_store<F>(
    store: &ParamStore<f64>,
    extra: Vec<Tensor<f64>>,
    eps: f64,
    max_elems: usize,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let ids = ids(store);
    let n = extra.len();
    let mut inputs = extra;
    inputs.extend(store.iter().map(|p| p.value().clone()));
    check_gradients(&inputs, eps, max_elems, 11, |g, vars| {
        let overrides: Vec<_> = ids.iter().copied().zip(vars[n..].iter().cloned()).collect();
        let p = store.bind_with(g, &overrides)?;
        f(g, &p, &vars[..n])
    })
}

pub fn conv2d() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (2, 0, 1), (1, 0, 3)] {
        let x = random(&[3, 7, 6], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let r = check_gradients(&[x, w], EPS, 64, 2, |g, v| project(g, &v[0].conv2d(&v[1], stride, pad)?, 3))?;
        out.push((format!("conv2d k{k} s{stride} p{pad}"), r));
    }
    Ok(out)
}

pub fn pixel_shuffle() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[8, 3, 4], &mut rng);
    Ok(vec![(
        "pixel_shuffle".into(),
        check_gradients(&[x], EPS, 96, 2, |g, v| project(g, &v[0].pixel_shuffle()?, 4))?,
    )])
}

pub fn leaky_relu() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = off_zero(&[2, 5, 5], &mut rng);
    Ok(vec![(
        "leaky_relu".into(),
        check_gradients(&[x], EPS, 50, 2, |g, v| project(g, &v[0].leaky_relu(0.01), 5))?,
    )])
}

pub fn haar() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut out = Vec::new();
    for (band, (h, w)) in HaarBand::ALL.into_iter().zip([(6, 6), (5, 7), (8, 3), (7, 7)]) {
        let x = random(&[2, h, w], &mut rng);
        let r = check_gradients(&[x], EPS, 100, 2, |g, v| project(g, &haar_filter(&v[0], band)?, 6))?;
        out.push((format!("haar_filter {band:?} {h}x{w}"), r));
    }
    Ok(out)
}

pub fn gdn_igdn() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 4, 4], &mut rng);
    let b = Tensor::from_fn(&[3], |_| rng.random_range(0.5..1.5));
    let gm = Tensor::from_fn(&[3, 3], |_| rng.random_range(-0.6..0.6));
    let fwd = check_gradients(&[x.clone(), b.clone(), gm.clone()], EPS, 48, 2, |g, v| {
        project(g, &gdn(&v[0], &v[1], &v[2])?, 7)
    })?;
    let inv = check_gradients(&[x, b, gm], EPS, 48, 2, |g, v| project(g, &igdn(&v[0], &v[1], &v[2])?, 7))?;
    // Through the registered layer, at its initialisation.
    let mut store = ParamStore::new();
    let layer = Gdn::new(&mut store, "gdn", 3, false);
    let x = random(&[3, 4, 4], &mut rng);
    let init = check_with_store(&store, vec![x], EPS, 48, |g, p, v| project(g, &layer.forward(p, &v[0])?, 8))?;
    Ok(vec![("gdn".into(), fwd), ("igdn".into(), inv), ("gdn layer".into(), init)])
}

pub fn residual_blocks() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for (direction, (h, w)) in [(Direction::Down, (7, 6)), (Direction::Up, (3, 4))] {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let rb = ResidualBlock::new(&mut store, "rb", 3, 4, direction, 0.01, &mut rng);
        let x = random(&[3, h, w], &mut rng);
        let r = check_with_store(&store, vec![x], EPS, 40, |g, p, v| project(g, &rb.forward(p, &v[0])?, 9))?;
        out.push((format!("residual block {direction:?}"), r));
    }
    Ok(out)
}

pub fn octave_layers() -> Result<Vec<(String, GradCheckReport)>> {
    let cases = [
        ("weoctconv first", Direction::Down, Boundary::First, 3, (7, 6)),
        ("weoctconv interior", Direction::Down, Boundary::Interior, 3, (5, 6)),
        ("tweoctconv interior", Direction::Up, Boundary::Interior, 3, (3, 3)),
        ("tweoctconv last", Direction::Up, Boundary::Last, 3, (3, 2)),
    ];
    let mut out = Vec::new();
    for (name, direction, boundary, cin, (h, w)) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let cout = if boundary == Boundary::Last { 3 } else { 4 };
        let layer = OctaveLayer::new(&mut store, "oct", cin, cout, direction, boundary, 0.01, &mut rng)?;
        let mut inputs = vec![random(&[cin, h, w], &mut rng)];
        if boundary != Boundary::First {
            inputs.push(random(&[cin, h, w], &mut rng));
        }
        let r = check_with_store(&store, inputs, EPS, 30, |g, p, v| {
            let io = if v.len() == 1 {
                OctaveIo::Single(v[0].clone())
            } else {
                OctaveIo::Pair(PairVar::new(v[0].clone(), v[1].clone())?)
            };
            match layer.forward(p, io)? {
                OctaveIo::Single(y) => project(g, &y, 10),
                OctaveIo::Pair(pair) => project(g, &pair.low, 10)?.add(&project(g, &pair.high, 12)?),
            }
        })?;
        out.push((name.to_string(), r));
    }
    Ok(out)
}

pub fn likelihood() -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let density = FactorizedDensity::new(&mut store, "density", 3, &mut rng);
    let y = Tensor::from_fn(&[3, 3, 4], |_| rng.random_range(-3.0..3.0));
    let r = check_with_store(&store, vec![y], EPS, 40, |g, p, v| {
        project(g, &density.likelihood(p, &v[0])?.ln(), 13)
    })?;
    Ok(vec![("likelihood".into(), r)])
}

/// Full loss of the 16x16 toy model, along a random direction in the image and
/// in every parameter tensor; quantization noise is fixed across evaluations.
pub fn toy_loss(metric: Metric) -> Result<Vec<(String, GradCheckReport)>> {
    let model = FlicModel::<f64>::new(FlicConfig::toy(), 5)?;
    let store = model.params();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inputs = vec![Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.05..0.95))];
    inputs.extend(store.iter().map(|p| p.value().clone()));
    let ids = ids(store);
    let cfg = LossConfig::new(0.01, 0.1, metric)?;
    let r = check_directional(&inputs, DIRECTIONAL_EPS, 12, |g, v| {
        let overrides: Vec<_> = ids.iter().copied().zip(v[1..].iter().cloned()).collect();
        let p = store.bind_with(g, &overrides)?;
        let mut noise = ChaCha8Rng::seed_from_u64(10);
        Ok(loss_var(g, &p, &model, &v[0], &cfg, QuantMode::Noise, Some(&mut noise))?.0)
    })?;
    Ok(vec![(format!("toy 16x16 loss ({metric})"), r)])
}

pub fn all() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for part in [conv2d()?, pixel_shuffle()?, leaky_relu()?, haar()?, gdn_igdn()?, residual_blocks()?, octave_layers()?, likelihood()?] {
        out.extend(part);
    }
    out.extend(toy_loss(Metric::Mse)?);
    out.extend(toy_loss(Metric::MsSsim)?);
    Ok(out)
}
