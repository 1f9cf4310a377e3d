//! Static rANS with 16-bit frequencies, a 32-bit state and byte renormalization.
//!
//! Symbols are pushed in reverse so the decoder pops them in natural order. The final
//! encoder state is stored big-endian in the first four bytes of the payload.

use super::tables::{CdfTable, PRECISION_BITS};
use crate::error::{FlicError, Result};

const RANS_L: u32 = 1 << 23;

/// Channel-major symbols of a `[C, h, w]` latent, coded against `table`.
pub fn rans_encode(symbols: &[i32], table: &CdfTable) -> Result<Vec<u8>> {
    let channels = table.channels().len();
    if channels == 0 || symbols.len() % channels != 0 {
        return Err(FlicError::invalid(format!(
            "{} symbols cannot be split into {channels} channels",
            symbols.len()
        )));
    }
    let plane = symbols.len() / channels;
    let mut out = Vec::with_capacity(symbols.len() / 4 + 8);
    let mut x = RANS_L;
    for (i, &s) in symbols.iter().enumerate().rev() {
        let c = if plane == 0 { 0 } else { i / plane };
        let (start, freq) = table.channel(c).interval(s).ok_or_else(|| {
            FlicError::invalid(format!("symbol {s} outside the table range of channel {c}"))
        })?;
        let x_max = ((RANS_L >> PRECISION_BITS) << 8) * freq;
        while x >= x_max {
            out.push(x as u8);
            x >>= 8;
        }
        x = ((x / freq) << PRECISION_BITS) + (x % freq) + start;
    }
    out.extend_from_slice(&x.to_le_bytes());
    out.reverse();
    Ok(out)
}

/// Inverse of [`rans_encode`]; `count` symbols are decoded.
pub fn rans_decode(payload: &[u8], table: &CdfTable, count: usize) -> Result<Vec<i32>> {
    let channels = table.channels().len();
    if channels == 0 || count % channels != 0 {
        return Err(FlicError::invalid(format!(
            "{count} symbols cannot be split into {channels} channels"
        )));
    }
    if payload.len() < 4 {
        return Err(FlicError::format(0, "rANS payload shorter than its state"));
    }
    let plane = count / channels;
    let mut x = u32::from_be_bytes([payload[0], payload[1], payload[2], payload[3]]);
    let mut pos = 4;
    let mask = (1u32 << PRECISION_BITS) - 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let table = table.channel(i / plane);
        let cum = x & mask;
        let (s, start, freq) = table.lookup(cum);
        x = freq * (x >> PRECISION_BITS) + cum - start;
        while x < RANS_L {
            let Some(&b) = payload.get(pos) else {
                return Err(FlicError::format(pos, "rANS payload ended early"));
            };
            x = (x << 8) | b as u32;
            pos += 1;
        }
        out.push(s);
    }
    if x != RANS_L || pos != payload.len() {
        return Err(FlicError::format(pos, "rANS payload does not end in the initial state"));
    }
    Ok(out)
}
