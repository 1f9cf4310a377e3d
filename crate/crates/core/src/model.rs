//! The full analysis/synthesis transforms, their entropy models and weight files.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bytes::Reader;
use crate::entropy::{DensitySnapshot, FactorizedDensity};
use crate::error::{FlicError, Result};
use crate::layers::{conv3, he_normal, Boundary, Direction, Gdn, InterTerms, OctaveIo, OctaveLayer, PairVar};
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Real, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;

const WEIGHTS_MAGIC: &[u8; 4] = b"FLCW";
const WEIGHTS_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct FlicConfig {
    /// Output channels of each analysis stage (both branches); the last is the latent width.
    pub channels: Vec<usize>,
    pub lrelu_slope: f32,
}

impl FlicConfig {
    /// Four stages of `[32, 64, 96, 128]` channels.
    pub fn toy() -> Self {
        FlicConfig {
            channels: vec![32, 64, 96, 128],
            lrelu_slope: 0.01,
        }
    }

    /// Four stages sized to about 30M parameters.
    pub fn large() -> Self {
        FlicConfig {
            channels: vec![96, 160, 208, 240],
            lrelu_slope: 0.01,
        }
    }

    /// Two small stages, for fast tests.
    pub fn tiny() -> Self {
        FlicConfig {
            channels: vec![4, 6],
            lrelu_slope: 0.01,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "large" => Ok(Self::large()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(FlicError::invalid(format!("unknown model preset {name:?}"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.channels.last().expect("validated config has stages")
    }

    /// Spatial downsampling factor `2^stages`.
    pub fn factor(&self) -> usize {
        1 << self.stages()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages() < 2 || self.stages() > 12 {
            return Err(FlicError::invalid(format!(
                "need between 2 and 12 stages, got {}",
                self.stages()
            )));
        }
        if self.channels.iter().any(|&c| c == 0 || c > u16::MAX as usize) {
            return Err(FlicError::invalid(format!("invalid channel counts {:?}", self.channels)));
        }
        if !(self.lrelu_slope.is_finite() && self.lrelu_slope >= 0.0) {
            return Err(FlicError::invalid(format!("invalid LeakyReLU slope {}", self.lrelu_slope)));
        }
        Ok(())
    }

    /// Latent grid `(h, w)` of an `H x W` image.
    pub fn latent_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.factor()), width.div_ceil(self.factor()))
    }
}

/// The quantized or continuous latent pair `(Y^L, Y^H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair<T> {
    pub low: Tensor<T>,
    pub high: Tensor<T>,
}

impl<T: Real> LatentPair<T> {
    pub fn new(low: Tensor<T>, high: Tensor<T>) -> Result<Self> {
        if low.shape() != high.shape() || low.shape().len() != 3 {
            return Err(FlicError::invalid(format!(
                "latent branches must share a [C, h, w] shape, got {:?} and {:?}",
                low.shape(),
                high.shape()
            )));
        }
        Ok(LatentPair { low, high })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.low.dims3().expect("validated shape")
    }

    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        LatentPair {
            low: f(&self.low),
            high: f(&self.high),
        }
    }

    /// The pair with `Y^H` replaced by zeros.
    pub fn base_only(&self) -> Self {
        LatentPair {
            low: self.low.clone(),
            high: Tensor::zeros(self.high.shape()),
        }
    }
}

/// Inter-frequency terms of every analysis layer, in layer order.
pub type AnalysisProbe<T> = Vec<InterTerms<T>>;

#[derive(Clone, Debug)]
pub struct FlicModel<T = f32> {
    config: FlicConfig,
    params: ParamStore<T>,
    analysis: Vec<OctaveLayer>,
    gdn_low: Gdn,
    gdn_high: Gdn,
    entry_low: ParamId,
    entry_high: ParamId,
    igdn_low: Gdn,
    igdn_high: Gdn,
    synthesis: Vec<OctaveLayer>,
    density_low: FactorizedDensity,
    density_high: FactorizedDensity,
}

impl<T: Real> FlicModel<T> {
    /// Deterministic initialization from `seed`.
    pub fn new(config: FlicConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let slope = config.lrelu_slope as f64;
        let s = config.stages();
        let latent = config.latent_channels();

        let mut analysis = Vec::with_capacity(s);
        let mut cin = IMAGE_CHANNELS;
        for (i, &cout) in config.channels.iter().enumerate() {
            let boundary = if i == 0 { Boundary::First } else { Boundary::Interior };
            let name = format!("analysis.{i}");
            analysis.push(OctaveLayer::new(&mut p, &name, cin, cout, Direction::Down, boundary, slope, &mut rng)?);
            cin = cout;
        }
        let gdn_low = Gdn::new(&mut p, "analysis.gdn_low", latent, false);
        let gdn_high = Gdn::new(&mut p, "analysis.gdn_high", latent, false);

        let entry_low = p.add("synthesis.entry_low", he_normal(&[latent, latent, 3, 3], &mut rng));
        let entry_high = p.add("synthesis.entry_high", he_normal(&[latent, latent, 3, 3], &mut rng));
        let igdn_low = Gdn::new(&mut p, "synthesis.igdn_low", latent, true);
        let igdn_high = Gdn::new(&mut p, "synthesis.igdn_high", latent, true);
        let mut synthesis = Vec::with_capacity(s);
        for i in 0..s {
            let cin = config.channels[s - 1 - i];
            let (cout, boundary) = if i + 1 == s {
                (IMAGE_CHANNELS, Boundary::Last)
            } else {
                (config.channels[s - 2 - i], Boundary::Interior)
            };
            let name = format!("synthesis.{i}");
            synthesis.push(OctaveLayer::new(&mut p, &name, cin, cout, Direction::Up, boundary, slope, &mut rng)?);
        }

        let density_low = FactorizedDensity::new(&mut p, "entropy.low", latent, &mut rng);
        let density_high = FactorizedDensity::new(&mut p, "entropy.high", latent, &mut rng);
        Ok(FlicModel {
            config,
            params: p,
            analysis,
            gdn_low,
            gdn_high,
            entry_low,
            entry_high,
            igdn_low,
            igdn_high,
            synthesis,
            density_low,
            density_high,
        })
    }

    pub fn config(&self) -> &FlicConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn analysis_layers(&self) -> &[OctaveLayer] {
        &self.analysis
    }

    pub fn synthesis_layers(&self) -> &[OctaveLayer] {
        &self.synthesis
    }

    /// GDN instances of the analysis transform, `(low, high)`.
    pub fn analysis_gdns(&self) -> (Gdn, Gdn) {
        (self.gdn_low, self.gdn_high)
    }

    pub fn density_low(&self) -> &FactorizedDensity {
        &self.density_low
    }

    pub fn density_high(&self) -> &FactorizedDensity {
        &self.density_high
    }

    /// Frozen `(low, high)` densities for table construction.
    pub fn snapshots(&self) -> (DensitySnapshot, DensitySnapshot) {
        (
            self.density_low.snapshot(&self.params),
            self.density_high.snapshot(&self.params),
        )
    }

    pub fn cast<U: Real>(&self) -> FlicModel<U> {
        FlicModel {
            config: self.config.clone(),
            params: self.params.cast(),
            analysis: self.analysis.clone(),
            gdn_low: self.gdn_low,
            gdn_high: self.gdn_high,
            entry_low: self.entry_low,
            entry_high: self.entry_high,
            igdn_low: self.igdn_low,
            igdn_high: self.igdn_high,
            synthesis: self.synthesis.clone(),
            density_low: self.density_low.clone(),
            density_high: self.density_high.clone(),
        }
    }

    fn check_image(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let &[c, h, w] = shape else {
            return Err(FlicError::invalid(format!("image must be [3, H, W], got {shape:?}")));
        };
        let f = self.config.factor();
        if c != IMAGE_CHANNELS || h < f || w < f {
            return Err(FlicError::invalid(format!(
                "image must be [3, H, W] with H, W >= {f}, got {shape:?}"
            )));
        }
        Ok((h, w))
    }

    /// Analysis transform on the graph. `probe` receives each layer's inter-frequency terms.
    pub fn analyze_var<'g>(
        &self,
        p: &Bound<'g, T>,
        x: &Var<'g, T>,
        mut probe: Option<&mut AnalysisProbe<T>>,
    ) -> Result<PairVar<'g, T>> {
        self.check_image(x.shape())?;
        let mut io = OctaveIo::Single(x.clone());
        for layer in &self.analysis {
            let mut terms = InterTerms::default();
            io = layer.forward_traced(p, io, probe.is_some().then_some(&mut terms))?;
            if let Some(pr) = probe.as_deref_mut() {
                pr.push(terms);
            }
        }
        let pair = io.into_pair()?;
        PairVar::new(self.gdn_low.forward(p, &pair.low)?, self.gdn_high.forward(p, &pair.high)?)
    }

    /// Synthesis transform on the graph, cropped to `height x width`.
    pub fn synthesize_var<'g>(
        &self,
        p: &Bound<'g, T>,
        low: &Var<'g, T>,
        high: &Var<'g, T>,
        height: usize,
        width: usize,
    ) -> Result<Var<'g, T>> {
        let (c, h, w) = low.value().dims3()?;
        let latent = self.config.latent_channels();
        if c != latent || low.shape() != high.shape() {
            return Err(FlicError::invalid(format!(
                "latents must both be [{latent}, h, w], got {:?} and {:?}",
                low.shape(),
                high.shape()
            )));
        }
        if self.config.latent_dims(height, width) != (h, w) {
            return Err(FlicError::invalid(format!(
                "a {h}x{w} latent does not decode to a {height}x{width} image"
            )));
        }
        let low = self.igdn_low.forward(p, &conv3(low, &p[self.entry_low])?)?;
        let high = self.igdn_high.forward(p, &conv3(high, &p[self.entry_high])?)?;
        let mut io = OctaveIo::Pair(PairVar::new(low, high)?);
        for layer in &self.synthesis {
            io = layer.forward(p, io)?;
        }
        io.into_single()?.crop(height, width)
    }

    /// Per-branch likelihoods `(p(Y^L), p(Y^H))` of a latent pair.
    pub fn likelihoods<'g>(
        &self,
        p: &Bound<'g, T>,
        low: &Var<'g, T>,
        high: &Var<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        Ok((self.density_low.likelihood(p, low)?, self.density_high.likelihood(p, high)?))
    }

    /// Continuous latents of a `[3, H, W]` image.
    pub fn analyze(&self, image: &Tensor<T>) -> Result<LatentPair<T>> {
        self.analyze_probed(image, None)
    }

    pub fn analyze_probed(&self, image: &Tensor<T>, probe: Option<&mut AnalysisProbe<T>>) -> Result<LatentPair<T>> {
        let g = Graph::no_grad();
        let p = self.params.bind(&g);
        let pair = self.analyze_var(&p, &g.constant(image.clone()), probe)?;
        LatentPair::new(pair.low.value().clone(), pair.high.value().clone())
    }

    /// Reconstruction of size `height x width` (unclamped).
    pub fn synthesize(&self, latents: &LatentPair<T>, height: usize, width: usize) -> Result<Tensor<T>> {
        let g = Graph::no_grad();
        let p = self.params.bind(&g);
        let low = g.constant(latents.low.clone());
        let high = g.constant(latents.high.clone());
        Ok(self.synthesize_var(&p, &low, &high, height, width)?.value().clone())
    }

    /// Serialized weights in the `FLCW` layout.
    pub fn weights_bytes(&self) -> Vec<u8> {
        let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = vec![
            (
                "config.channels".into(),
                vec![self.config.channels.len()],
                self.config.channels.iter().map(|&c| c as f32).collect(),
            ),
            ("config.lrelu_slope".into(), vec![1], vec![self.config.lrelu_slope]),
        ];
        for p in self.params.iter() {
            let v = p.value();
            entries.push((
                p.name().to_string(),
                v.shape().to_vec(),
                v.data().iter().map(|x| x.as_f64() as f32).collect(),
            ));
        }
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, dims, values) in entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(dims.len() as u8);
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// First 8 bytes of the SHA-256 of [`FlicModel::weights_bytes`].
    pub fn model_id(&self) -> [u8; 8] {
        let digest = Sha256::digest(self.weights_bytes());
        let mut id = [0; 8];
        id.copy_from_slice(&digest[..8]);
        id
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.weights_bytes())?;
        Ok(())
    }

    pub fn from_weights_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if &r.array::<4>("magic")? != WEIGHTS_MAGIC {
            return Err(FlicError::format(0, "not a weight file (bad magic)"));
        }
        let version = r.u8("version")?;
        if version != WEIGHTS_VERSION {
            return Err(FlicError::format(4, format!("unsupported weight file version {version}")));
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.offset();
            let len = r.u16("entry name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| FlicError::format(at + 2, "entry name is not UTF-8"))?
                .to_string();
            let dtype_at = r.offset();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(FlicError::format(dtype_at, format!("unknown dtype code {dtype} for {name:?}")));
            }
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| r.error(format!("entry {name:?} with dims {dims:?} exceeds the file")))?;
            let raw = r.take(4 * n, "entry values")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((at, name, dims, values));
        }
        if r.remaining() != 0 {
            return Err(r.error("trailing bytes after the last entry"));
        }

        let find = |key: &str| entries.iter().find(|e| e.1 == key);
        let (at, _, _, channels) = find("config.channels").ok_or_else(|| FlicError::format(9, "missing config.channels"))?;
        let channels = channels
            .iter()
            .map(|&c| {
                (c >= 1.0 && c.fract() == 0.0 && c <= u16::MAX as f32)
                    .then_some(c as usize)
                    .ok_or_else(|| FlicError::format(*at, format!("invalid channel count {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let slope = match find("config.lrelu_slope") {
            Some((_, _, _, v)) if v.len() == 1 => v[0],
            _ => return Err(FlicError::format(9, "missing config.lrelu_slope")),
        };
        let config = FlicConfig {
            channels,
            lrelu_slope: slope,
        };
        config.validate().map_err(|e| FlicError::format(9, e.to_string()))?;

        let mut model = FlicModel::<T>::new(config, 0)?;
        let expected = model.params.len() + 2;
        if entries.len() != expected {
            return Err(FlicError::format(
                5,
                format!("expected {expected} entries for this configuration, found {}", entries.len()),
            ));
        }
        for (at, name, dims, values) in entries {
            if name.starts_with("config.") {
                continue;
            }
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| FlicError::format(at, format!("unexpected entry {name:?}")))?;
            let param = model.params.get_mut(id);
            if param.value().shape() != dims.as_slice() {
                return Err(FlicError::format(
                    at,
                    format!("entry {name:?} has shape {dims:?}, expected {:?}", param.value().shape()),
                ));
            }
            for (dst, v) in param.value_mut().data_mut().iter_mut().zip(values) {
                *dst = T::from_f64(v as f64);
            }
        }
        Ok(model)
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weights_bytes(&std::fs::read(path)?)
    }
}

/// Hex rendering of a model id.
pub fn model_id_hex(id: &[u8; 8]) -> String {
    id.iter().map(|b| format!("{b:02x}")).collect()
}
