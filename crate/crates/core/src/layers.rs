//! GDN/IGDN, residual blocks and the wavelet-embedded octave convolution layers.
//!
//! Every convolution here is bias-free.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FlicError, Result};
use crate::numerics::{Bound, ParamId, ParamStore, Real, Tensor, Var};
use crate::wavelet::{haar_filter, HaarBand};

pub const DEFAULT_LRELU_SLOPE: f64 = 0.01;
/// Lower bound added to the squared GDN offset.
pub const GDN_BETA_FLOOR: f64 = 1e-6;

/// He-normal initialised `[cout, cin, k, k]` convolution weights.
pub fn he_normal<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
}

fn scaled<T: Real>(t: Tensor<T>, gain: f64) -> Tensor<T> {
    let g = T::from_f64(gain);
    t.map(|v| v * g)
}

pub(crate) fn conv3<'g, T: Real>(x: &Var<'g, T>, w: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.conv2d(w, 1, 1)
}

/// Conv3 producing `4 * Cout` channels followed by a 2x pixel shuffle.
pub fn conv3_ps<'g, T: Real>(x: &Var<'g, T>, w: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.conv2d(w, 1, 1)?.pixel_shuffle()
}

/// Positive GDN parameters `beta = b^2 + 1e-6`, `gamma = g^2` from their raw form.
fn gdn_norm<'g, T: Real>(x: &Var<'g, T>, beta_raw: &Var<'g, T>, gamma_raw: &Var<'g, T>) -> Result<Var<'g, T>> {
    let (c, _, _) = x.value().dims3()?;
    if beta_raw.shape() != [c] || gamma_raw.shape() != [c, c] {
        return Err(FlicError::invalid(format!(
            "GDN over {c} channels got beta {:?} and gamma {:?}",
            beta_raw.shape(),
            gamma_raw.shape()
        )));
    }
    let beta = beta_raw.square().offset(T::from_f64(GDN_BETA_FLOOR));
    let gamma = gamma_raw.square().reshape(&[c, c, 1, 1])?;
    x.square().conv2d(&gamma, 1, 0)?.add_prefix(&beta).map(|v| v.sqrt())
}

/// `y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)` at every spatial position.
pub fn gdn<'g, T: Real>(x: &Var<'g, T>, beta_raw: &Var<'g, T>, gamma_raw: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.div(&gdn_norm(x, beta_raw, gamma_raw)?)
}

/// Inverse GDN: multiplies by the normaliser instead of dividing.
pub fn igdn<'g, T: Real>(x: &Var<'g, T>, beta_raw: &Var<'g, T>, gamma_raw: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.mul(&gdn_norm(x, beta_raw, gamma_raw)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gdn {
    pub beta: ParamId,
    pub gamma: ParamId,
    pub inverse: bool,
}

impl Gdn {
    /// Registers `name.beta` / `name.gamma` initialised to `beta = 1`, `gamma = 0.1 I`.
    ///
    /// Off-diagonal raw entries start at 2^-18 rather than 0 so that the squared
    /// reparameterisation still passes them a gradient.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, inverse: bool) -> Self {
        let beta = store.add(format!("{name}.beta"), Tensor::full(&[channels], T::one()));
        let diag = T::from_f64(0.1f64.sqrt());
        let off = T::from_f64(2f64.powi(-18));
        let gamma = Tensor::from_fn(&[channels, channels], |i| {
            if i / channels == i % channels {
                diag
            } else {
                off
            }
        });
        let gamma = store.add(format!("{name}.gamma"), gamma);
        Gdn { beta, gamma, inverse }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        if self.inverse {
            igdn(x, &p[self.beta], &p[self.gamma])
        } else {
            gdn(x, &p[self.beta], &p[self.gamma])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Halves the spatial dims (analysis).
    Down,
    /// Doubles the spatial dims (synthesis).
    Up,
}

/// Intra-frequency update.
///
/// `Down`: main = Conv3s2 -> LReLU -> Conv3 -> LReLU, skip = Conv1s2.
/// `Up`: main = Conv3PS -> LReLU -> Conv3 -> LReLU, skip = Conv3PS.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBlock {
    pub direction: Direction,
    pub main_first: ParamId,
    pub main_second: ParamId,
    pub skip: ParamId,
    pub slope: f64,
}

impl ResidualBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        direction: Direction,
        slope: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let (first, skip) = match direction {
            Direction::Down => ([cout, cin, 3, 3], [cout, cin, 1, 1]),
            Direction::Up => ([4 * cout, cin, 3, 3], [4 * cout, cin, 3, 3]),
        };
        let main_first = store.add(format!("{name}.main1"), he_normal(&first, rng));
        let main_second = store.add(format!("{name}.main2"), he_normal(&[cout, cout, 3, 3], rng));
        let skip = store.add(format!("{name}.skip"), he_normal(&skip, rng));
        ResidualBlock {
            direction,
            main_first,
            main_second,
            skip,
            slope,
        }
    }

    /// Multiplies the weights producing the two summed paths by `gain`.
    pub fn scale_outputs<T: Real>(&self, store: &mut ParamStore<T>, gain: f64) {
        for id in [self.main_second, self.skip] {
            let v = store.get_mut(id).value_mut();
            *v = scaled(v.clone(), gain);
        }
    }

    pub fn main_branch<'g, T: Real>(&self, p: &Bound<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let slope = T::from_f64(self.slope);
        let h = match self.direction {
            Direction::Down => x.conv2d(&p[self.main_first], 2, 1)?,
            Direction::Up => conv3_ps(x, &p[self.main_first])?,
        };
        Ok(conv3(&h.leaky_relu(slope), &p[self.main_second])?.leaky_relu(slope))
    }

    pub fn skip_branch<'g, T: Real>(&self, p: &Bound<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        match self.direction {
            Direction::Down => x.conv2d(&p[self.skip], 2, 0),
            Direction::Up => conv3_ps(x, &p[self.skip]),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.main_branch(p, x)?.add(&self.skip_branch(p, x)?)
    }
}

/// Position of an octave layer in its transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Interior,
    /// First analysis layer: a single image input routed as the high-frequency input.
    First,
    /// Last synthesis layer: a single RGB output taken from the high-frequency port.
    Last,
}

/// A `(low, high)` pair of graph values with matching shapes.
#[derive(Clone)]
pub struct PairVar<'g, T> {
    pub low: Var<'g, T>,
    pub high: Var<'g, T>,
}

impl<'g, T: Real> PairVar<'g, T> {
    pub fn new(low: Var<'g, T>, high: Var<'g, T>) -> Result<Self> {
        if low.shape() != high.shape() {
            return Err(FlicError::invalid(format!(
                "low/high branch shape mismatch: {:?} vs {:?}",
                low.shape(),
                high.shape()
            )));
        }
        Ok(PairVar { low, high })
    }
}

#[derive(Clone)]
pub enum OctaveIo<'g, T> {
    Single(Var<'g, T>),
    Pair(PairVar<'g, T>),
}

impl<'g, T: Real> OctaveIo<'g, T> {
    pub fn into_pair(self) -> Result<PairVar<'g, T>> {
        match self {
            OctaveIo::Pair(p) => Ok(p),
            OctaveIo::Single(_) => Err(FlicError::invalid("expected a low/high pair, got a single tensor")),
        }
    }

    pub fn into_single(self) -> Result<Var<'g, T>> {
        match self {
            OctaveIo::Single(v) => Ok(v),
            OctaveIo::Pair(_) => Err(FlicError::invalid("expected a single tensor, got a low/high pair")),
        }
    }
}

/// The two inter-frequency terms a layer added, for inspection.
#[derive(Clone, Debug, Default)]
pub struct InterTerms<T> {
    /// Contribution added to the high-frequency output (`None` when the path is absent).
    pub low_to_high: Option<Tensor<T>>,
    /// Contribution added to the low-frequency output.
    pub high_to_low: Option<Tensor<T>>,
}

/// WeOctConv (`Down`) or TWeOctConv (`Up`) layer.
///
/// Analysis: `H' = RB(H) + Conv3(HH(L))`, `L' = RB(L) + Conv3(LL(H))`.
/// Synthesis: `H' = RB(H) + Conv3PS(L)`, `L' = RB(L) + Conv3PS(H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OctaveLayer {
    pub direction: Direction,
    pub boundary: Boundary,
    pub cin: usize,
    pub cout: usize,
    pub intra_high: ResidualBlock,
    pub intra_low: Option<ResidualBlock>,
    pub low_to_high: Option<ParamId>,
    pub high_to_low: Option<ParamId>,
}

impl OctaveLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        direction: Direction,
        boundary: Boundary,
        slope: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        match (direction, boundary) {
            (Direction::Down, Boundary::Last) | (Direction::Up, Boundary::First) => {
                return Err(FlicError::invalid(format!(
                    "{boundary:?} boundary is not valid for a {direction:?} layer"
                )))
            }
            _ => {}
        }
        let inter_shape = match direction {
            Direction::Down => [cout, cin, 3, 3],
            Direction::Up => [4 * cout, cin, 3, 3],
        };
        let has_low_in = boundary != Boundary::First;
        let has_low_out = boundary != Boundary::Last;

        let intra_high = ResidualBlock::new(store, &format!("{name}.intra_high"), cin, cout, direction, slope, rng);
        let intra_low = (has_low_in && has_low_out)
            .then(|| ResidualBlock::new(store, &format!("{name}.intra_low"), cin, cout, direction, slope, rng));
        // Each output sums two residual-block paths and at most one inter term; the
        // paths are scaled so the sum keeps the variance of a single path.
        let high_gain = (1.0 / (2.0 + has_low_in as u8 as f64)).sqrt();
        let low_gain = if has_low_in { (1.0f64 / 3.0).sqrt() } else { 1.0 };
        intra_high.scale_outputs(store, high_gain);
        if let Some(rb) = &intra_low {
            rb.scale_outputs(store, low_gain);
        }
        let low_to_high = has_low_in
            .then(|| store.add(format!("{name}.low_to_high"), scaled(he_normal(&inter_shape, rng), high_gain)));
        let high_to_low = has_low_out
            .then(|| store.add(format!("{name}.high_to_low"), scaled(he_normal(&inter_shape, rng), low_gain)));
        Ok(OctaveLayer {
            direction,
            boundary,
            cin,
            cout,
            intra_high,
            intra_low,
            low_to_high,
            high_to_low,
        })
    }

    /// Inter-frequency update of `x` along the path whose weights are `w`.
    fn inter<'g, T: Real>(&self, x: &Var<'g, T>, w: &Var<'g, T>, band: HaarBand) -> Result<Var<'g, T>> {
        match self.direction {
            Direction::Down => conv3(&haar_filter(x, band)?, w),
            Direction::Up => conv3_ps(x, w),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: &Bound<'g, T>, input: OctaveIo<'g, T>) -> Result<OctaveIo<'g, T>> {
        self.forward_traced(p, input, None)
    }

    /// [`OctaveLayer::forward`], optionally reporting the inter-frequency terms.
    pub fn forward_traced<'g, T: Real>(
        &self,
        p: &Bound<'g, T>,
        input: OctaveIo<'g, T>,
        trace: Option<&mut InterTerms<T>>,
    ) -> Result<OctaveIo<'g, T>> {
        let (low, high) = match (self.boundary, input) {
            (Boundary::First, OctaveIo::Single(x)) => (None, x),
            (Boundary::First, OctaveIo::Pair(_)) => {
                return Err(FlicError::invalid("first layer takes a single image input"))
            }
            (_, OctaveIo::Pair(pair)) => {
                PairVar::new(pair.low.clone(), pair.high.clone())?;
                (Some(pair.low), pair.high)
            }
            (_, OctaveIo::Single(_)) => {
                return Err(FlicError::invalid("layer expects a low/high input pair"))
            }
        };
        if high.value().dims3()?.0 != self.cin {
            return Err(FlicError::invalid(format!(
                "layer expects {} input channels, got {:?}",
                self.cin,
                high.shape()
            )));
        }

        let l2h = match (&low, self.low_to_high) {
            (Some(l), Some(w)) => Some(self.inter(l, &p[w], HaarBand::HH)?),
            _ => None,
        };
        let h2l = match self.high_to_low {
            Some(w) => Some(self.inter(&high, &p[w], HaarBand::LL)?),
            None => None,
        };
        if let Some(t) = trace {
            t.low_to_high = l2h.as_ref().map(|v| v.value().clone());
            t.high_to_low = h2l.as_ref().map(|v| v.value().clone());
        }

        let mut high_out = self.intra_high.forward(p, &high)?;
        if let Some(term) = &l2h {
            high_out = high_out.add(term)?;
        }
        if self.boundary == Boundary::Last {
            return Ok(OctaveIo::Single(high_out));
        }
        let h2l = h2l.expect("non-last layers have a low output");
        let low_out = match (&self.intra_low, &low) {
            (Some(rb), Some(l)) => rb.forward(p, l)?.add(&h2l)?,
            _ => h2l,
        };
        Ok(OctaveIo::Pair(PairVar::new(low_out, high_out)?))
    }
}
