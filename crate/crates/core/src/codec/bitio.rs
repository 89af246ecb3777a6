use crate::error::{Error, Result};

/// Reads entropy-coded bits, undoing 0xFF00 byte stuffing.
pub(crate) struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u32,
    nbits: u32,
    /// Set once a marker (0xFF followed by a non-zero byte) is reached.
    hit_marker: bool,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8], start: usize) -> Self {
        BitReader { data, pos: start, acc: 0, nbits: 0, hit_marker: false }
    }

    /// Byte offset of the next unread byte.
    pub fn position(&self) -> usize {
        self.pos
    }

    fn refill(&mut self) -> Result<()> {
        while self.nbits <= 24 {
            if self.hit_marker || self.pos >= self.data.len() {
                break;
            }
            let b = self.data[self.pos];
            if b == 0xFF {
                match self.data.get(self.pos + 1) {
                    Some(0x00) => self.pos += 2,
                    Some(_) => {
                        self.hit_marker = true;
                        break;
                    }
                    None => return Err(Error::format(self.pos, "truncated entropy-coded data")),
                }
            } else {
                self.pos += 1;
            }
            self.acc |= (b as u32) << (24 - self.nbits);
            self.nbits += 8;
        }
        Ok(())
    }

    pub fn read_bit(&mut self) -> Result<u32> {
        if self.nbits == 0 {
            self.refill()?;
            if self.nbits == 0 {
                return Err(Error::format(self.pos, "entropy-coded data ended early"));
            }
        }
        let bit = self.acc >> 31;
        self.acc <<= 1;
        self.nbits -= 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, n: u8) -> Result<u16> {
        let mut v = 0u32;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()?;
        }
        Ok(v as u16)
    }

    /// Offset just past the scan data, where the next marker starts.
    pub fn finish(mut self) -> usize {
        self.acc = 0;
        self.nbits = 0;
        while self.pos < self.data.len() {
            if self.data[self.pos] == 0xFF && self.data.get(self.pos + 1).is_some_and(|&b| b != 0) {
                break;
            }
            self.pos += if self.data[self.pos] == 0xFF { 2 } else { 1 };
        }
        self.pos
    }
}

/// Writes entropy-coded bits with 0xFF stuffing.
pub(crate) struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        BitWriter { out: Vec::new(), acc: 0, nbits: 0 }
    }

    pub fn write(&mut self, value: u32, n: u8) {
        if n == 0 {
            return;
        }
        let n = n as u32;
        self.acc = (self.acc << n) | (value as u64 & ((1u64 << n) - 1));
        self.nbits += n;
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0);
            }
            self.nbits -= 8;
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    /// Pads the last byte with one-bits and returns the stuffed stream.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits as u8;
            self.write((1u32 << pad) - 1, pad);
        }
        self.out
    }
}
