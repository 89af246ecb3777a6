use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variable-length integer code: group index (bit count) plus that many bits.
///
/// Positive values use their natural binary form; negative values the
/// one's complement of their magnitude. Group 0 carries no bits and means 0.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VliCode {
    pub group: u8,
    pub bits: u16,
}

impl VliCode {
    pub const ZERO: VliCode = VliCode { group: 0, bits: 0 };

    pub fn new(group: u8, bits: u16) -> Result<Self> {
        if group > 15 {
            return Err(Error::Range(format!("group index {group} exceeds 15")));
        }
        if (bits as u32) >> group != 0 {
            return Err(Error::format(0, format!("bits {bits:#b} longer than group {group}")));
        }
        Ok(VliCode { group, bits })
    }

    /// Bits as a '0'/'1' string of length `group`.
    pub fn bit_string(&self) -> String {
        (0..self.group)
            .rev()
            .map(|i| if (self.bits >> i) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for VliCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vli({}, \"{}\")", self.group, self.bit_string())
    }
}

/// Bit length of `|value|`, i.e. the JPEG magnitude category.
pub fn magnitude_category(value: i32) -> u8 {
    (32 - value.unsigned_abs().leading_zeros()) as u8
}

pub fn vli_encode(value: i32) -> Result<VliCode> {
    if value == 0 {
        return Err(Error::Range("VLI of zero has no bits; use VliCode::ZERO".into()));
    }
    if value.unsigned_abs() > 0x7FFF {
        return Err(Error::Range(format!("|{value}| exceeds 2^15 - 1")));
    }
    let group = magnitude_category(value);
    let bits = if value > 0 { value as u16 } else { ((1i32 << group) - 1 + value) as u16 };
    Ok(VliCode { group, bits })
}

pub fn vli_decode(code: VliCode) -> Result<i32> {
    if code.group > 15 || (code.bits as u32) >> code.group != 0 {
        return Err(Error::format(0, format!("VLI bits do not fit group {}", code.group)));
    }
    if code.group == 0 {
        return Ok(0);
    }
    let bits = code.bits as i32;
    if bits >> (code.group - 1) == 1 {
        Ok(bits)
    } else {
        Ok(bits - ((1 << code.group) - 1))
    }
}
