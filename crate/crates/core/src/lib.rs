//! Frequency-aware, quality-scalable learned image codec.
//!
//! Images are decomposed by wavelet-embedded octave convolutions into a low-frequency
//! and a high-frequency latent. The two latents are entropy-coded into a base and an
//! enhancement bitstream, so a decoder can reconstruct from the base layer alone, from
//! both layers, or from the base layer plus enhancement tiles for selected regions.

pub(crate) mod bytes;
pub mod bitstream;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod roi;
pub mod training;
pub mod wavelet;

pub use error::{FlicError, Result};
