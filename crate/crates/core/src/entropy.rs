//! Adaptive binary range coder (32-bit range, carry-propagating low) and the
//! integer binarizations built on it.
//!
//! Probabilities are 11-bit estimates of a zero bit, adapted with a shift of 5
//! after every coded bit. Integers are binarized as a bit-length bucket coded
//! through a 5-level binary tree, followed by the bits below the leading one,
//! each with its own adaptive context.

use crate::error::{Error, Result};

const PROB_BITS: u32 = 11;
const PROB_ONE: u16 = 1 << PROB_BITS;
const ADAPT_SHIFT: u32 = 5;
const TOP: u32 = 1 << 24;

/// Largest bit length an integer model accepts.
pub const MAX_VALUE_BITS: u32 = 31;

#[derive(Debug, Clone, Copy)]
pub struct BitModel(u16);

impl Default for BitModel {
    fn default() -> Self {
        BitModel(PROB_ONE / 2)
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

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
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
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Equiprobable bits, most significant first.
    pub fn encode_direct(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.range >>= 1;
            if (value >> i) & 1 == 1 {
                self.low += self.range as u64;
            }
            while self.range < TOP {
                self.range <<= 8;
                self.shift_low();
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    overrun: bool,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 5 {
            return Err(Error::Truncated("range coder stream shorter than 5 bytes"));
        }
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
            overrun: false,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> u8 {
        match self.data.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overrun = true;
                0
            }
        }
    }

    pub fn decode_bit(&mut self, model: &mut BitModel) -> bool {
        let bound = (self.range >> PROB_BITS) * model.0 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code = self.code.wrapping_sub(bound);
            self.range -= bound;
            true
        };
        model.update(bit);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        bit
    }

    pub fn decode_direct(&mut self, bits: u32) -> u32 {
        let mut v = 0;
        for _ in 0..bits {
            self.range >>= 1;
            let bit = self.code >= self.range;
            if bit {
                self.code = self.code.wrapping_sub(self.range);
            }
            v = (v << 1) | bit as u32;
            while self.range < TOP {
                self.range <<= 8;
                self.code = (self.code << 8) | self.next_byte() as u32;
            }
        }
        v
    }

    /// Fails if the decoder ever read past the end of its input.
    pub fn finish(self) -> Result<()> {
        if self.overrun {
            Err(Error::Truncated("range coder read past end of payload"))
        } else {
            Ok(())
        }
    }
}

/// Adaptive model for unsigned integers below `2^MAX_VALUE_BITS`.
#[derive(Debug, Clone)]
pub struct UIntModel {
    bucket: [BitModel; 32],
    mantissa: Vec<[BitModel; MAX_VALUE_BITS as usize]>,
}

impl Default for UIntModel {
    fn default() -> Self {
        Self {
            bucket: [BitModel::default(); 32],
            mantissa: vec![[BitModel::default(); MAX_VALUE_BITS as usize]; MAX_VALUE_BITS as usize + 1],
        }
    }
}

impl UIntModel {
    pub fn encode(&mut self, enc: &mut RangeEncoder, value: u32) {
        let k = 32 - value.leading_zeros();
        debug_assert!(k <= MAX_VALUE_BITS);
        let mut node = 1usize;
        for i in (0..5).rev() {
            let bit = (k >> i) & 1 == 1;
            enc.encode_bit(&mut self.bucket[node], bit);
            node = (node << 1) | bit as usize;
        }
        if k > 1 {
            let ctx = &mut self.mantissa[k as usize];
            for i in (0..k - 1).rev() {
                enc.encode_bit(&mut ctx[i as usize], (value >> i) & 1 == 1);
            }
        }
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<u32> {
        let mut node = 1usize;
        for _ in 0..5 {
            let bit = dec.decode_bit(&mut self.bucket[node]);
            node = (node << 1) | bit as usize;
        }
        let k = (node - 32) as u32;
        if k > MAX_VALUE_BITS {
            return Err(Error::Truncated("integer bucket out of range"));
        }
        if k == 0 {
            return Ok(0);
        }
        let mut v = 1u32;
        let ctx = &mut self.mantissa[k as usize];
        for i in (0..k - 1).rev() {
            v = (v << 1) | dec.decode_bit(&mut ctx[i as usize]) as u32;
        }
        Ok(v)
    }
}

/// Magnitude through a [`UIntModel`] followed by an adaptive sign bit.
#[derive(Debug, Clone, Default)]
pub struct SignedModel {
    magnitude: UIntModel,
    sign: BitModel,
}

impl SignedModel {
    pub fn encode(&mut self, enc: &mut RangeEncoder, value: i32) {
        self.magnitude.encode(enc, value.unsigned_abs());
        if value != 0 {
            enc.encode_bit(&mut self.sign, value < 0);
        }
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder) -> Result<i32> {
        let m = self.magnitude.decode(dec)?;
        if m == 0 {
            return Ok(0);
        }
        let m = i32::try_from(m).map_err(|_| Error::Truncated("signed magnitude overflow"))?;
        Ok(if dec.decode_bit(&mut self.sign) { -m } else { m })
    }
}

pub fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

pub fn unzigzag(u: u32) -> i32 {
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}
