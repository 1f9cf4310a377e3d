use super::density::DensitySnapshot;
use super::rans::{rans_decode, rans_encode};
use super::tables::{build_cdf_tables, symbol_ranges, widen_ranges, CdfTable};
use crate::bytes::Reader;
use crate::error::{FlicError, Result};
use crate::numerics::{Real, Tensor};

/// rANS payload plus the symbol ranges its tables were built over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedChunk {
    pub ranges: Vec<(i16, i16)>,
    pub payload: Vec<u8>,
}

impl CodedChunk {
    pub fn channels(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges_i32(&self) -> Vec<(i32, i32)> {
        self.ranges.iter().map(|&(a, b)| (a as i32, b as i32)).collect()
    }

    /// Bytes taken by [`CodedChunk::write`].
    pub fn encoded_len(&self) -> usize {
        2 + 4 * self.ranges.len() + 4 + self.payload.len()
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.ranges.len() as u16).to_le_bytes());
        for &(lo, hi) in &self.ranges {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write(&mut out);
        out
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u16("chunk channel count")? as usize;
        let mut ranges = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let lo = r.i16("chunk symbol range")?;
            let hi = r.i16("chunk symbol range")?;
            if lo > hi {
                return Err(FlicError::format(at, format!("symbol range [{lo}, {hi}] is empty")));
            }
            if (hi as i32 - lo as i32 + 1) as usize > super::tables::MAX_SYMBOLS {
                return Err(FlicError::format(at, format!("symbol range [{lo}, {hi}] is too wide")));
            }
            ranges.push((lo, hi));
        }
        let len = r.u32("chunk payload length")? as usize;
        let payload = r.take(len, "chunk payload")?.to_vec();
        Ok(CodedChunk { ranges, payload })
    }

    /// Parses one chunk from the front of `bytes`, returning it and the bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader::new(bytes);
        let chunk = Self::read(&mut r)?;
        Ok((chunk, r.offset()))
    }
}

/// Codes integer symbols (channel-major) with a prebuilt table.
pub fn ans_encode(symbols: &[i32], table: &CdfTable) -> Result<CodedChunk> {
    let ranges = table
        .ranges()
        .into_iter()
        .map(|(lo, hi)| {
            let lo = i16::try_from(lo).map_err(|_| FlicError::invalid("table range exceeds i16"))?;
            let hi = i16::try_from(hi).map_err(|_| FlicError::invalid("table range exceeds i16"))?;
            Ok((lo, hi))
        })
        .collect::<Result<_>>()?;
    Ok(CodedChunk {
        ranges,
        payload: rans_encode(symbols, table)?,
    })
}

/// Decodes `count` symbols; the table must match the chunk's ranges.
pub fn ans_decode(chunk: &CodedChunk, table: &CdfTable, count: usize) -> Result<Vec<i32>> {
    if table.ranges() != chunk.ranges_i32() {
        return Err(FlicError::invalid("table ranges differ from the chunk's ranges"));
    }
    rans_decode(&chunk.payload, table, count)
}

fn to_symbols<T: Real>(y_hat: &Tensor<T>) -> Result<Vec<i32>> {
    y_hat
        .data()
        .iter()
        .map(|v| {
            let f = v.as_f64();
            if f.fract() != 0.0 || f < i16::MIN as f64 || f > i16::MAX as f64 {
                Err(FlicError::invalid(format!("latent value {f} is not a 16-bit integer")))
            } else {
                Ok(f as i32)
            }
        })
        .collect()
}

/// Codes a rounded `[C, h, w]` latent: ranges come from the data, widened into the tails.
pub fn encode_latent<T: Real>(y_hat: &Tensor<T>, density: &DensitySnapshot) -> Result<CodedChunk> {
    let (c, _, _) = y_hat.dims3()?;
    if c != density.channels() {
        return Err(FlicError::invalid(format!(
            "density models {} channels, latent has {c}",
            density.channels()
        )));
    }
    let symbols = to_symbols(y_hat)?;
    let ranges = widen_ranges(density, &symbol_ranges(&symbols, c)?);
    let table = build_cdf_tables(density, &ranges)?;
    ans_encode(&symbols, &table)
}

/// Inverse of [`encode_latent`] for a latent of the given `[C, h, w]` shape.
pub fn decode_latent<T: Real>(
    chunk: &CodedChunk,
    density: &DensitySnapshot,
    shape: [usize; 3],
) -> Result<Tensor<T>> {
    if chunk.channels() != shape[0] || shape[0] != density.channels() {
        return Err(FlicError::invalid(format!(
            "chunk has {} channels, latent shape {shape:?}, density {}",
            chunk.channels(),
            density.channels()
        )));
    }
    let table = build_cdf_tables(density, &chunk.ranges_i32())?;
    let symbols = ans_decode(chunk, &table, shape.iter().product())?;
    Tensor::new(&shape, symbols.into_iter().map(|s| T::from_f64(s as f64)).collect())
}
