use super::density::DensitySnapshot;
use crate::error::{FlicError, Result};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Mass left outside the widened symbol range.
pub const TAIL_MASS: f64 = 1e-9;
/// Upper bound on the symbols in one channel table, including tails.
pub const MAX_SYMBOLS: usize = 4096;

/// Quantized CDF of one channel over the symbols `offset .. offset + count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelCdf {
    offset: i32,
    cdf: Vec<u32>,
}

impl ChannelCdf {
    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn count(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn max_symbol(&self) -> i32 {
        self.offset + self.count() as i32 - 1
    }

    /// `count + 1` cumulative frequencies, from 0 to 2^16.
    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    /// `(start, freq)` of a symbol, if it is in range.
    pub fn interval(&self, symbol: i32) -> Option<(u32, u32)> {
        let i = symbol.checked_sub(self.offset)?;
        if i < 0 || i as usize >= self.count() {
            return None;
        }
        let i = i as usize;
        Some((self.cdf[i], self.cdf[i + 1] - self.cdf[i]))
    }

    /// Symbol whose interval contains `cum` (`cum < 2^16`).
    pub fn lookup(&self, cum: u32) -> (i32, u32, u32) {
        let i = self.cdf.partition_point(|&c| c <= cum) - 1;
        (self.offset + i as i32, self.cdf[i], self.cdf[i + 1] - self.cdf[i])
    }

    /// Ideal code length of a symbol under the quantized table.
    pub fn bits(&self, symbol: i32) -> Option<f64> {
        self.interval(symbol)
            .map(|(_, f)| PRECISION_BITS as f64 - (f as f64).log2())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    channels: Vec<ChannelCdf>,
}

impl CdfTable {
    pub fn channels(&self) -> &[ChannelCdf] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &ChannelCdf {
        &self.channels[c]
    }

    pub fn ranges(&self) -> Vec<(i32, i32)> {
        self.channels
            .iter()
            .map(|c| (c.offset, c.max_symbol()))
            .collect()
    }
}

/// Per-channel `[min, max]` of a `[C, ...]` symbol array.
pub fn symbol_ranges(symbols: &[i32], channels: usize) -> Result<Vec<(i32, i32)>> {
    if channels == 0 || symbols.len() % channels != 0 || symbols.is_empty() {
        return Err(FlicError::invalid(format!(
            "{} symbols cannot be split into {channels} channels",
            symbols.len()
        )));
    }
    let plane = symbols.len() / channels;
    Ok(symbols
        .chunks(plane)
        .map(|ch| {
            ch.iter()
                .fold((i32::MAX, i32::MIN), |(lo, hi), &s| (lo.min(s), hi.max(s)))
        })
        .collect())
}

/// Extends each range into the density tails until the mass left outside is below
/// [`TAIL_MASS`] on each side, keeping at most [`MAX_SYMBOLS`] symbols and staying
/// within `i16`.
pub fn widen_ranges(density: &DensitySnapshot, ranges: &[(i32, i32)]) -> Vec<(i32, i32)> {
    ranges
        .iter()
        .enumerate()
        .map(|(c, &(mut lo, mut hi))| {
            let mut grow_low = true;
            let mut grow_high = true;
            while (grow_low || grow_high) && ((hi - lo + 1) as usize) < MAX_SYMBOLS {
                if grow_low {
                    grow_low = lo > i16::MIN as i32 && density.cdf(c, lo as f64 - 0.5) > TAIL_MASS;
                    if grow_low {
                        lo -= 1;
                    }
                }
                if grow_high && ((hi - lo + 1) as usize) < MAX_SYMBOLS {
                    grow_high = hi < i16::MAX as i32 && 1.0 - density.cdf(c, hi as f64 + 0.5) > TAIL_MASS;
                    if grow_high {
                        hi += 1;
                    }
                }
            }
            (lo, hi)
        })
        .collect()
}

/// Deterministic 16-bit quantization of the density over the given symbol ranges.
///
/// Every symbol receives a frequency of at least 1; the rounding remainder goes to the
/// most probable symbol.
pub fn build_cdf_tables(density: &DensitySnapshot, ranges: &[(i32, i32)]) -> Result<CdfTable> {
    if ranges.len() != density.channels() {
        return Err(FlicError::invalid(format!(
            "{} symbol ranges for a {}-channel density",
            ranges.len(),
            density.channels()
        )));
    }
    let channels = ranges
        .iter()
        .enumerate()
        .map(|(c, &(lo, hi))| {
            if lo > hi {
                return Err(FlicError::invalid(format!(
                    "empty symbol range [{lo}, {hi}] for channel {c}"
                )));
            }
            let n = (hi as i64 - lo as i64 + 1) as usize;
            if n > MAX_SYMBOLS {
                return Err(FlicError::invalid(format!(
                    "channel {c} spans {n} symbols, more than {MAX_SYMBOLS}"
                )));
            }
            let probs: Vec<f64> = (lo..=hi).map(|s| density.pmf(c, s)).collect();
            Ok(ChannelCdf {
                offset: lo,
                cdf: quantize_pmf(&probs),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CdfTable { channels })
}

fn quantize_pmf(probs: &[f64]) -> Vec<u32> {
    let n = probs.len() as u32;
    let total: f64 = probs.iter().sum();
    let spare = (TOTAL_FREQ - n) as f64;
    let mut freqs: Vec<u32> = if total > 0.0 && total.is_finite() {
        probs
            .iter()
            .map(|&p| 1 + (p / total * spare).floor() as u32)
            .collect()
    } else {
        vec![1; probs.len()]
    };
    let assigned: u32 = freqs.iter().sum();
    let argmax = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    freqs[argmax] += TOTAL_FREQ - assigned;

    let mut cdf = Vec::with_capacity(freqs.len() + 1);
    cdf.push(0);
    let mut acc = 0;
    for f in freqs {
        acc += f;
        cdf.push(acc);
    }
    cdf
}
