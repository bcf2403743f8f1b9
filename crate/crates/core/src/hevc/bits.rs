//! MSB-first bit reader over an RBSP with Exp-Golomb helpers.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitError {
    #[error("bitstream exhausted at bit {position} while reading {wanted} bits")]
    Exhausted { position: usize, wanted: u32 },
    #[error("exp-golomb code longer than 32 bits at bit {position}")]
    GolombOverflow { position: usize },
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0 }
    }

    /// Bit offset from the start of the buffer.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        if self.pos >= self.data.len() * 8 {
            return Err(BitError::Exhausted { position: self.pos, wanted: 1 });
        }
        let byte = self.data[self.pos / 8];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    pub fn read_flag(&mut self) -> Result<bool, BitError> {
        self.read_bit()
    }

    /// Fixed-width unsigned read, `n <= 64`.
    pub fn read_bits(&mut self, n: u32) -> Result<u64, BitError> {
        debug_assert!(n <= 64);
        if (n as usize) > self.remaining() {
            return Err(BitError::Exhausted { position: self.pos, wanted: n });
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_u32(&mut self, n: u32) -> Result<u32, BitError> {
        debug_assert!(n <= 32);
        Ok(self.read_bits(n)? as u32)
    }

    pub fn skip(&mut self, n: usize) -> Result<(), BitError> {
        if n > self.remaining() {
            return Err(BitError::Exhausted { position: self.pos, wanted: n as u32 });
        }
        self.pos += n;
        Ok(())
    }

    /// ue(v)
    pub fn read_ue(&mut self) -> Result<u32, BitError> {
        let start = self.pos;
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 31 {
                return Err(BitError::GolombOverflow { position: start });
            }
        }
        let suffix = self.read_bits(zeros)?;
        let v = (1u64 << zeros) - 1 + suffix;
        u32::try_from(v).map_err(|_| BitError::GolombOverflow { position: start })
    }

    /// se(v)
    pub fn read_se(&mut self) -> Result<i32, BitError> {
        let k = self.read_ue()? as i64;
        let v = if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
        Ok(v as i32)
    }

    /// True when the remaining bits are exactly `rbsp_trailing_bits()`.
    pub fn at_trailing_bits(&self) -> bool {
        let mut probe = self.clone();
        match probe.read_bit() {
            Ok(true) => {}
            _ => return false,
        }
        while let Ok(b) = probe.read_bit() {
            if b {
                return false;
            }
        }
        probe.pos.is_multiple_of(8)
    }
}
