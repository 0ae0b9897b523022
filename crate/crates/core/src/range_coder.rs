//! Byte-oriented range coder with 32-bit range state and carry propagation,
//! plus the static frequency table it codes against. Bytes travel through the
//! bit-level writer/reader so sections stay bit-packed.

use crate::bitstream::{BitReader, BitWriter};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

/// Total frequency mass of every model table.
pub const FREQ_TOTAL: u32 = 1 << 22;

/// Static cumulative-frequency model over a contiguous symbol window.
#[derive(Debug, Clone)]
pub struct StaticModel {
    /// cum[i] is the cumulative frequency below symbol i; len = symbols + 1,
    /// cum[len-1] == FREQ_TOTAL.
    cum: Vec<u32>,
}

impl StaticModel {
    /// Build from nonnegative weights; every symbol is given at least one
    /// count so any in-window symbol stays decodable. Leftover mass goes to
    /// the heaviest symbol (smallest index on ties).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 || n as u32 >= FREQ_TOTAL / 2 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("alphabet size {n} unsupported"),
            });
        }
        let total_w: f64 = weights.iter().sum();
        if !(total_w > 0.0) || !total_w.is_finite() {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must sum to a positive finite value".into(),
            });
        }
        let budget = FREQ_TOTAL - n as u32;
        let mut freqs: Vec<u32> = weights
            .iter()
            .map(|&w| 1 + ((w.max(0.0) / total_w) * budget as f64).floor() as u32)
            .collect();
        let assigned: u64 = freqs.iter().map(|&f| f as u64).sum();
        let leftover = FREQ_TOTAL as u64 - assigned;
        let heaviest = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        freqs[heaviest] += leftover as u32;
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Ok(Self { cum })
    }

    pub fn symbols(&self) -> usize {
        self.cum.len() - 1
    }

    fn span(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.cum[symbol + 1])
    }

    /// Symbol whose cumulative span contains `target`.
    fn lookup(&self, target: u32) -> usize {
        // Binary search over cum; cum is strictly increasing.
        let mut lo = 0usize;
        let mut hi = self.symbols();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

pub struct RangeEncoder<'a> {
    out: &'a mut BitWriter,
    low: u64,
    range: u32,
    cache: u8,
    cache_pending: u64,
    first: bool,
}

impl<'a> RangeEncoder<'a> {
    pub fn new(out: &'a mut BitWriter) -> Self {
        Self { out, low: 0, range: u32::MAX, cache: 0, cache_pending: 0, first: true }
    }

    pub fn encode(&mut self, model: &StaticModel, symbol: usize) {
        let (lo, hi) = model.span(symbol);
        let r = self.range / FREQ_TOTAL;
        self.low += r as u64 * lo as u64;
        self.range = r * (hi - lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            if !self.first {
                self.out.write_bits(self.cache.wrapping_add(carry) as u64, 8);
            }
            for _ in 0..self.cache_pending {
                self.out.write_bits(0xFFu8.wrapping_add(carry) as u64, 8);
            }
            self.cache_pending = 0;
            self.cache = (self.low >> 24) as u8;
            self.first = false;
        } else {
            self.cache_pending += 1;
        }
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Flush the coder state; five shift cycles empty low and the cache.
    pub fn finish(mut self) {
        for _ in 0..5 {
            self.shift_low();
        }
    }
}

pub struct RangeDecoder<'a, 'b> {
    input: &'a mut BitReader<'b>,
    code: u32,
    range: u32,
}

impl<'a, 'b> RangeDecoder<'a, 'b> {
    pub fn new(input: &'a mut BitReader<'b>) -> Result<Self> {
        let mut code = 0u32;
        for _ in 0..4 {
            code = (code << 8) | input.read_bits(8)? as u32;
        }
        Ok(Self { input, code, range: u32::MAX })
    }

    pub fn decode(&mut self, model: &StaticModel) -> Result<usize> {
        let r = self.range / FREQ_TOTAL;
        let target = (self.code / r).min(FREQ_TOTAL - 1);
        let symbol = model.lookup(target);
        let (lo, hi) = model.span(symbol);
        self.code -= r * lo;
        self.range = r * (hi - lo);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    fn next_byte(&mut self) -> Result<u8> {
        // The encoder's final flush may be shorter than the decoder's
        // lookahead wants; trailing reads past the section are zeros.
        if self.input.remaining() >= 8 {
            Ok(self.input.read_bits(8)? as u8)
        } else {
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(weights: &[f64], symbols: &[usize]) {
        let model = StaticModel::from_weights(weights).unwrap();
        let mut w = BitWriter::new();
        let mut enc = RangeEncoder::new(&mut w);
        for &s in symbols {
            enc.encode(&model, s);
        }
        enc.finish();
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        let mut dec = RangeDecoder::new(&mut r).unwrap();
        for &s in symbols {
            assert_eq!(dec.decode(&model).unwrap(), s);
        }
    }

    #[test]
    fn skewed_model_round_trip() {
        let weights = [1000.0, 1.0, 50.0, 0.001, 10.0];
        let symbols: Vec<usize> = (0..5000).map(|i| [0, 0, 0, 2, 0, 4, 0, 1, 0, 3][i % 10]).collect();
        round_trip(&weights, &symbols);
    }

    #[test]
    fn single_symbol_alphabet_costs_almost_nothing() {
        let model = StaticModel::from_weights(&[1.0]).unwrap();
        let mut w = BitWriter::new();
        let mut enc = RangeEncoder::new(&mut w);
        for _ in 0..10_000 {
            enc.encode(&model, 0);
        }
        enc.finish();
        // Rounding loss stays under ~0.05 bits/symbol plus the flush tail.
        assert!(w.len_bits() <= 600, "got {} bits", w.len_bits());
    }

    #[test]
    fn near_entropy_on_biased_source() {
        // P(0) = 0.9, P(1) = 0.1: H = 0.469 bits/symbol.
        let model = StaticModel::from_weights(&[0.9, 0.1]).unwrap();
        let n = 20_000usize;
        let symbols: Vec<usize> = (0..n).map(|i| usize::from((i * 2654435761) % 10 == 0)).collect();
        let ones = symbols.iter().filter(|&&s| s == 1).count();
        let mut w = BitWriter::new();
        let mut enc = RangeEncoder::new(&mut w);
        for &s in &symbols {
            enc.encode(&model, s);
        }
        enc.finish();
        let p1 = ones as f64 / n as f64;
        let entropy = -(p1 * p1.log2() + (1.0 - p1) * (1.0 - p1).log2());
        let rate = w.len_bits() as f64 / n as f64;
        assert!(rate < entropy + 0.05 + 64.0 / n as f64, "rate {rate} vs entropy {entropy}");
        round_trip(&[0.9, 0.1], &symbols);
    }
}
