//! Carry-less range coder with 64-bit state and byte-wise renormalization.

use super::{QuantizedCdf, PROB_BITS};
use crate::error::{Error, Result};

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
            symbols: 0,
        }
    }

    pub fn encode(&mut self, cdf: &QuantizedCdf, symbol: usize) {
        let (start, freq) = (cdf.start(symbol), cdf.freq(symbol));
        debug_assert!(freq > 0);
        self.range >>= PROB_BITS;
        self.low = self.low.wrapping_add(u64::from(start) * self.range);
        self.range *= u64::from(freq);
        self.normalize();
        self.symbols += 1;
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the state. A coder that saw no symbols produces no bytes.
    pub fn finish(mut self) -> Vec<u8> {
        if self.symbols > 0 {
            for _ in 0..8 {
                self.out.push((self.low >> 56) as u8);
                self.low <<= 8;
            }
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    low: u64,
    range: u64,
    code: u64,
    started: bool,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        RangeDecoder {
            bytes,
            pos: 0,
            low: 0,
            range: u64::MAX,
            code: 0,
            started: false,
        }
    }

    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::corruption(self.pos, "range coder read past end of section"))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<usize> {
        if !self.started {
            for _ in 0..8 {
                self.code = (self.code << 8) | u64::from(self.byte()?);
            }
            self.started = true;
        }
        self.range >>= PROB_BITS;
        let value = self.code.wrapping_sub(self.low) / self.range;
        if value >= u64::from(cdf.total()) {
            return Err(Error::corruption(
                self.pos,
                "range coder value outside distribution",
            ));
        }
        let symbol = cdf.symbol_for(value as u32);
        self.low = self
            .low
            .wrapping_add(u64::from(cdf.start(symbol)) * self.range);
        self.range *= u64::from(cdf.freq(symbol));
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | u64::from(self.byte()?);
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Errors unless every byte of the section was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::corruption(
                self.pos,
                format!(
                    "{} unread bytes in range-coded section",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        Ok(())
    }
}

pub fn rc_encode(symbols: &[u8], cdfs: &[QuantizedCdf]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(Error::DimMismatch {
            expected: symbols.len(),
            actual: cdfs.len(),
        });
    }
    let mut enc = RangeEncoder::new();
    for (&s, c) in symbols.iter().zip(cdfs) {
        enc.encode(c, s as usize);
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols; `next_cdf(i, decoded_so_far)` yields the distribution for symbol `i`.
pub fn rc_decode(
    bytes: &[u8],
    n: usize,
    mut next_cdf: impl FnMut(usize, &[u8]) -> QuantizedCdf,
) -> Result<Vec<u8>> {
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let cdf = next_cdf(i, &out);
        out.push(dec.decode(&cdf)? as u8);
    }
    dec.finish()?;
    Ok(out)
}
