//! Adaptive binary range coder plus the symbol/integer models built on it.
//!
//! Classic carry-aware byte-wise range coder: 32-bit range, 11-bit adaptive
//! bit probabilities, shift-5 adaptation. Both reference codecs (label maps
//! and DCT coefficients) drive this coder with their own context models.

use crate::error::{Result, SpicError};

const PROB_BITS: u32 = 11;
const PROB_ONE: u16 = 1 << PROB_BITS;
const PROB_INIT: u16 = PROB_ONE / 2;
const ADAPT_SHIFT: u32 = 5;
const TOP: u32 = 1 << 24;

/// Adaptive probability of the next bit being 0, on an 11-bit scale.
#[derive(Debug, Clone, Copy)]
pub struct BitModel(u16);

impl Default for BitModel {
    fn default() -> Self {
        BitModel(PROB_INIT)
    }
}

impl BitModel {
    fn update(&mut self, bit: bool) {
        if bit {
            self.0 -= self.0 >> ADAPT_SHIFT;
        } else {
            self.0 += (PROB_ONE - self.0) >> ADAPT_SHIFT;
        }
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    pub fn encode_bit(&mut self, model: &mut BitModel, bit: bool) {
        let bound = (self.range >> PROB_BITS) * model.0 as u32;
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        model.update(bit);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Bit with a fixed 50/50 split; no model adaptation.
    pub fn encode_raw_bit(&mut self, bit: bool) {
        let bound = self.range >> 1;
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        // Keep only bits 0..24: the byte above them was just cached (or is
        // pending as 0xFF), and the carry bit has been consumed.
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut dec = Self {
            code: 0,
            range: u32::MAX,
            data,
            pos: 0,
        };
        for _ in 0..5 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied().ok_or(SpicError::Truncated {
            needed: self.pos + 1,
            have: self.data.len(),
        })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode_bit(&mut self, model: &mut BitModel) -> Result<bool> {
        let bound = (self.range >> PROB_BITS) * model.0 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(bit)
    }

    pub fn decode_raw_bit(&mut self) -> Result<bool> {
        let bound = self.range >> 1;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(bit)
    }
}

/// Bit-tree model over `1 << bits` symbols (MSB first), LZMA-style.
#[derive(Debug, Clone)]
pub struct TreeModel {
    bits: u32,
    probs: Vec<BitModel>,
}

impl TreeModel {
    pub fn new(bits: u32) -> Self {
        assert!((1..=8).contains(&bits));
        Self {
            bits,
            probs: vec![BitModel::default(); 1 << bits],
        }
    }

    /// Smallest tree that can hold symbols `0..n`.
    pub fn for_alphabet(n: usize) -> Self {
        let bits = usize::BITS - n.max(2).saturating_sub(1).leading_zeros();
        Self::new(bits)
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, symbol: u32) {
        debug_assert!(symbol < (1 << self.bits));
        let mut node = 1usize;
        for level in (0..self.bits).rev() {
            let bit = (symbol >> level) & 1 == 1;
            enc.encode_bit(&mut self.probs[node], bit);
            node = (node << 1) | bit as usize;
        }
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<u32> {
        let mut node = 1usize;
        for _ in 0..self.bits {
            let bit = dec.decode_bit(&mut self.probs[node])?;
            node = (node << 1) | bit as usize;
        }
        Ok(node as u32 - (1 << self.bits))
    }
}

const GAMMA_MAX_BITS: usize = 40;

/// Adaptive Elias-gamma-style model for unsigned integers: unary magnitude
/// class with one model per position, then the mantissa bits each with a
/// per-position model.
#[derive(Debug, Clone)]
pub struct UintModel {
    cont: [BitModel; GAMMA_MAX_BITS],
    mantissa: [BitModel; GAMMA_MAX_BITS],
}

impl Default for UintModel {
    fn default() -> Self {
        Self {
            cont: [BitModel::default(); GAMMA_MAX_BITS],
            mantissa: [BitModel::default(); GAMMA_MAX_BITS],
        }
    }
}

impl UintModel {
    pub fn encode(&mut self, enc: &mut RangeEncoder, value: u64) {
        let n = value + 1;
        let k = (63 - n.leading_zeros()) as usize; // bit length - 1
        debug_assert!(k < GAMMA_MAX_BITS);
        for i in 0..k {
            enc.encode_bit(&mut self.cont[i], true);
        }
        enc.encode_bit(&mut self.cont[k], false);
        for i in (0..k).rev() {
            enc.encode_bit(&mut self.mantissa[i], (n >> i) & 1 == 1);
        }
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<u64> {
        let mut k = 0usize;
        while dec.decode_bit(&mut self.cont[k])? {
            k += 1;
            if k >= GAMMA_MAX_BITS {
                return Err(SpicError::CorruptPayload(
                    "integer magnitude class out of range".into(),
                ));
            }
        }
        let mut n: u64 = 1;
        for i in (0..k).rev() {
            n = (n << 1) | dec.decode_bit(&mut self.mantissa[i])? as u64;
        }
        Ok(n - 1)
    }
}

/// Maps a signed integer onto the unsigned zigzag sequence 0, -1, 1, -2, 2...
pub fn zigzag_encode(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn zigzag_decode(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn bit_round_trip_skewed_sources() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for &p_one in &[0.01, 0.2, 0.5, 0.8, 0.99] {
            let bits: Vec<bool> = (0..20_000).map(|_| rng.gen_bool(p_one)).collect();
            let mut enc = RangeEncoder::new();
            let mut model = BitModel::default();
            for &b in &bits {
                enc.encode_bit(&mut model, b);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            let mut model = BitModel::default();
            for &b in &bits {
                assert_eq!(dec.decode_bit(&mut model).unwrap(), b);
            }
        }
    }

    #[test]
    fn skewed_source_compresses_below_raw() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 50_000;
        let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.03)).collect();
        let mut enc = RangeEncoder::new();
        let mut model = BitModel::default();
        for &b in &bits {
            enc.encode_bit(&mut model, b);
        }
        let bytes = enc.finish();
        // Entropy of p=0.03 is ~0.19 bits/symbol; allow generous slack.
        assert!(bytes.len() * 8 < n / 2, "compressed to {} bytes", bytes.len());
    }

    #[test]
    fn tree_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let symbols: Vec<u32> = (0..5_000).map(|_| rng.gen_range(0..23)).collect();
        let mut enc = RangeEncoder::new();
        let mut tree = TreeModel::for_alphabet(23);
        for &s in &symbols {
            tree.encode(&mut enc, s);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let mut tree = TreeModel::for_alphabet(23);
        for &s in &symbols {
            assert_eq!(tree.decode(&mut dec).unwrap(), s);
        }
    }

    #[test]
    fn uint_round_trip_with_large_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut values: Vec<u64> = (0..3_000)
            .map(|_| {
                let bits = rng.gen_range(0..34);
                rng.gen::<u64>() & ((1u64 << bits) - 1).max(1)
            })
            .collect();
        values.extend_from_slice(&[0, 1, 2, u32::MAX as u64, (1u64 << 33) - 1]);
        let mut enc = RangeEncoder::new();
        let mut model = UintModel::default();
        for &v in &values {
            model.encode(&mut enc, v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let mut model = UintModel::default();
        for &v in &values {
            assert_eq!(model.decode(&mut dec).unwrap(), v);
        }
    }

    #[test]
    fn truncated_stream_is_an_error_not_a_panic() {
        let mut enc = RangeEncoder::new();
        let mut model = BitModel::default();
        for i in 0..1000 {
            enc.encode_bit(&mut model, i % 3 == 0);
        }
        let bytes = enc.finish();
        for cut in [0, 1, 4, bytes.len() / 2] {
            let truncated = &bytes[..cut.min(bytes.len())];
            let mut model = BitModel::default();
            let result = RangeDecoder::new(truncated).and_then(|mut dec| {
                for _ in 0..1000 {
                    dec.decode_bit(&mut model)?;
                }
                Ok(())
            });
            assert!(result.is_err(), "cut at {cut} did not error");
        }
    }

    #[test]
    fn zigzag_is_involutive() {
        for v in [-5i64, -1, 0, 1, 7, i32::MAX as i64, i32::MIN as i64] {
            assert_eq!(zigzag_decode(zigzag_encode(v)), v);
        }
    }
}
