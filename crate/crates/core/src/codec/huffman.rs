use serde::{Deserialize, Serialize};

use super::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TableClass {
    Dc,
    Ac,
}

impl TableClass {
    pub fn code(self) -> u8 {
        match self {
            TableClass::Dc => 0,
            TableClass::Ac => 1,
        }
    }
}

/// A Huffman table as carried by a DHT segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HuffmanSpec {
    pub class: TableClass,
    pub id: u8,
    /// Number of codes of each length 1..=16.
    pub counts: [u8; 16],
    pub symbols: Vec<u8>,
}

impl HuffmanSpec {
    pub fn contains(&self, symbol: u8) -> bool {
        self.symbols.contains(&symbol)
    }

    /// Canonical (code, length) for every symbol.
    fn codes(&self) -> Vec<(u8, u16, u8)> {
        let mut out = Vec::with_capacity(self.symbols.len());
        let mut code = 0u32;
        let mut k = 0usize;
        for (len_idx, &count) in self.counts.iter().enumerate() {
            for _ in 0..count {
                out.push((self.symbols[k], code as u16, len_idx as u8 + 1));
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        out
    }

    pub(crate) fn validate(&self, offset: usize) -> Result<()> {
        let total: usize = self.counts.iter().map(|&c| c as usize).sum();
        if total != self.symbols.len() || total > 256 {
            return Err(Error::format(offset, "Huffman table counts do not match symbols"));
        }
        // Kraft: codes of each length must fit.
        let mut code = 0u32;
        for (len_idx, &count) in self.counts.iter().enumerate() {
            code += count as u32;
            if code > (1u32 << (len_idx + 1)) {
                return Err(Error::format(offset, "over-subscribed Huffman table"));
            }
            code <<= 1;
        }
        Ok(())
    }
}

/// Decoding tables in the style of the canonical maxcode/valptr procedure.
pub(crate) struct HuffmanDecoder {
    mincode: [i32; 17],
    maxcode: [i32; 18],
    valptr: [usize; 17],
    symbols: Vec<u8>,
}

impl HuffmanDecoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut mincode = [0i32; 17];
        let mut maxcode = [-1i32; 18];
        let mut valptr = [0usize; 17];
        let mut code = 0i32;
        let mut k = 0usize;
        for len in 1..=16 {
            let count = spec.counts[len - 1] as usize;
            if count > 0 {
                valptr[len] = k;
                mincode[len] = code;
                code += count as i32;
                k += count;
                maxcode[len] = code - 1;
            }
            code <<= 1;
        }
        maxcode[17] = i32::MAX;
        HuffmanDecoder { mincode, maxcode, valptr, symbols: spec.symbols.clone() }
    }

    pub fn decode(&self, reader: &mut BitReader<'_>) -> Result<u8> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | reader.read_bit()? as i32;
            if code <= self.maxcode[len] && self.maxcode[len] >= 0 {
                return Ok(self.symbols[self.valptr[len] + (code - self.mincode[len]) as usize]);
            }
        }
        Err(Error::format(reader.position(), "invalid Huffman code"))
    }
}

pub(crate) struct HuffmanEncoder {
    table: [(u16, u8); 256],
}

impl HuffmanEncoder {
    pub fn new(spec: &HuffmanSpec) -> Self {
        let mut table = [(0u16, 0u8); 256];
        for (sym, code, len) in spec.codes() {
            table[sym as usize] = (code, len);
        }
        HuffmanEncoder { table }
    }

    pub fn emit(&self, w: &mut BitWriter, symbol: u8) -> Result<()> {
        let (code, len) = self.table[symbol as usize];
        if len == 0 {
            return Err(Error::Encoding(format!("symbol {symbol:#04x} has no Huffman code")));
        }
        w.write(code as u32, len);
        Ok(())
    }
}

const STD_DC_LUMA_COUNTS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const STD_DC_CHROMA_COUNTS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const STD_AC_LUMA_COUNTS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
const STD_AC_CHROMA_COUNTS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];

const STD_AC_LUMA_SYMBOLS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
    0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5,
    0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

const STD_AC_CHROMA_SYMBOLS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33, 0x52, 0xF0,
    0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18, 0x19, 0x1A, 0x26,
    0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5,
    0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
    0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA,
    0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8,
    0xF9, 0xFA,
];

/// The example tables of ITU-T T.81 Annex K.3 (luminance for id 0, chrominance otherwise).
///
/// Each covers its full symbol alphabet, so substituting one never fails.
pub fn standard_table(class: TableClass, id: u8) -> HuffmanSpec {
    let luma = id == 0;
    let (counts, symbols) = match (class, luma) {
        (TableClass::Dc, true) => (STD_DC_LUMA_COUNTS, (0..12).collect()),
        (TableClass::Dc, false) => (STD_DC_CHROMA_COUNTS, (0..12).collect()),
        (TableClass::Ac, true) => (STD_AC_LUMA_COUNTS, STD_AC_LUMA_SYMBOLS.to_vec()),
        (TableClass::Ac, false) => (STD_AC_CHROMA_COUNTS, STD_AC_CHROMA_SYMBOLS.to_vec()),
    };
    HuffmanSpec { class, id, counts, symbols }
}
