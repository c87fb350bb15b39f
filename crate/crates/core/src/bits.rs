//! MSB-first bit streams and the integer codes used by the metadata codecs.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitError {
    #[error("bit stream exhausted at bit {0}")]
    Exhausted(usize),
    #[error("code word does not fit in 64 bits")]
    Overflow,
}

/// Append-only bit buffer, most significant bit of each byte first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn push_unary(&mut self, q: u64) {
        for _ in 0..q {
            self.push_bit(true);
        }
        self.push_bit(false);
    }

    /// Golomb-Rice code with parameter `k`: unary quotient, then `k` remainder bits.
    pub fn push_rice(&mut self, value: u64, k: u32) {
        self.push_unary(value >> k);
        if k > 0 {
            self.push_bits(value & ((1u64 << k) - 1), k);
        }
    }

    /// Elias-gamma code of `value >= 1`.
    pub fn push_gamma(&mut self, value: u64) {
        assert!(value >= 1, "Elias-gamma is defined for positive integers");
        let width = 64 - value.leading_zeros();
        for _ in 1..width {
            self.push_bit(false);
        }
        self.push_bits(value, width);
    }

    pub fn extend(&mut self, other: &BitWriter) {
        for i in 0..other.len {
            self.push_bit(other.bit(i));
        }
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Zero-padded bytes.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Cursor over an MSB-first bit buffer.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    limit: usize,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], limit: usize) -> Self {
        debug_assert!(limit <= bytes.len() * 8);
        Self { bytes, limit, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.pos
    }

    pub fn seek(&mut self, pos: usize) {
        self.pos = pos.min(self.limit);
    }

    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        if self.pos >= self.limit {
            return Err(BitError::Exhausted(self.pos));
        }
        let bit = self.bytes[self.pos / 8] & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64, BitError> {
        if width > 64 {
            return Err(BitError::Overflow);
        }
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_unary(&mut self) -> Result<u64, BitError> {
        let mut q = 0u64;
        while self.read_bit()? {
            q += 1;
        }
        Ok(q)
    }

    pub fn read_rice(&mut self, k: u32) -> Result<u64, BitError> {
        let q = self.read_unary()?;
        if k >= 64 || q > (u64::MAX >> k) {
            return Err(BitError::Overflow);
        }
        let r = if k > 0 { self.read_bits(k)? } else { 0 };
        Ok((q << k) | r)
    }

    pub fn read_gamma(&mut self) -> Result<u64, BitError> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros >= 64 {
                return Err(BitError::Overflow);
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok((1u64 << zeros) | rest)
    }
}

/// Length in bits of the Elias-gamma code of `value`.
pub fn gamma_len(value: u64) -> usize {
    let width = 64 - value.leading_zeros() as usize;
    2 * width - 1
}
