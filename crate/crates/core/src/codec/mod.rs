//! Baseline JPEG entropy layer, decoded only as far as the coefficient model.
//!
//! A [`CoeffImage`] keeps, per colour component, every 8x8 block as its DC
//! difference code plus the run-length `(r, v)` pairs of its AC coefficients.
//! Nothing is dequantised or transformed; re-encoding writes the same
//! structures back through the preserved Huffman tables.

mod bitio;
mod decode;
pub mod dump;
mod encode;
mod huffman;
pub mod rle;
pub mod vli;

use serde::{Deserialize, Serialize};

pub use decode::decode_jpeg;
pub use encode::encode_jpeg;
pub use huffman::{standard_table, HuffmanSpec, TableClass};
pub use rle::{pairs_from_zigzag, zigzag_from_pairs};
pub use vli::{vli_decode, vli_encode, VliCode};

use crate::Component;

/// Number of AC coefficients in a block.
pub const AC_COUNT: usize = 63;

/// One run-length pair: `r` zeros followed by the value `v`.
///
/// `v == 0` only for the zero-run-length sentinel `(15, 0)`; the end-of-block
/// marker is not stored as a pair (see [`Block::eob_present`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RvPair {
    pub r: u8,
    pub v: i16,
}

impl RvPair {
    pub const ZRL: RvPair = RvPair { r: 15, v: 0 };

    pub fn new(r: u8, v: i16) -> Self {
        RvPair { r, v }
    }

    pub fn is_zrl(&self) -> bool {
        *self == Self::ZRL
    }

    /// Coefficient positions consumed by this pair.
    pub fn span(&self) -> usize {
        self.r as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    /// DC difference, exactly as coded in the scan (never integrated).
    pub dc: VliCode,
    /// Non-EOB pairs in coding order.
    pub pairs: Vec<RvPair>,
    pub eob_present: bool,
}

impl Block {
    /// Coefficient positions covered by the stored pairs.
    pub fn coverage(&self) -> usize {
        self.pairs.iter().map(RvPair::span).sum()
    }

    /// Number of stored pairs (the `blksize` of the block; EOB excluded).
    pub fn size(&self) -> usize {
        self.pairs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentData {
    pub id: u8,
    pub h_samp: u8,
    pub v_samp: u8,
    pub quant_table: u8,
    pub dc_table: u8,
    pub ac_table: u8,
    /// Grid covered by the interleaved scan, in blocks (MCU-padded).
    pub blocks_wide: usize,
    pub blocks_high: usize,
    /// Blocks in the order the scan codes them (MCU order).
    pub blocks: Vec<Block>,
}

impl ComponentData {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantTable {
    pub id: u8,
    /// 0 for 8-bit entries, 1 for 16-bit.
    pub precision: u8,
    pub values: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JpegTables {
    pub quant: Vec<QuantTable>,
    pub huffman: Vec<HuffmanSpec>,
}

impl JpegTables {
    pub fn huffman(&self, class: TableClass, id: u8) -> Option<&HuffmanSpec> {
        self.huffman.iter().find(|t| t.class == class && t.id == id)
    }
}

/// Parsed baseline JPEG at the coefficient level. Always three components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoeffImage {
    pub width: u16,
    pub height: u16,
    /// Frame marker the source used (`0xC0` or `0xC1`).
    pub sof_marker: u8,
    pub components: [ComponentData; 3],
    pub tables: JpegTables,
    /// APPn / COM segments passed through verbatim: (marker, payload).
    pub extra_segments: Vec<(u8, Vec<u8>)>,
}

impl CoeffImage {
    pub fn component(&self, c: Component) -> &ComponentData {
        &self.components[c.index()]
    }

    pub fn component_mut(&mut self, c: Component) -> &mut ComponentData {
        &mut self.components[c.index()]
    }

    pub fn block_counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|c| self.components[c].blocks.len())
    }

    /// Equality of geometry and blocks, ignoring tables and pass-through
    /// segments (which re-encoding may legitimately change).
    pub fn same_coefficients(&self, other: &CoeffImage) -> bool {
        (self.width, self.height) == (other.width, other.height) && self.components == other.components
    }

    /// Checks the block-level invariants every stage relies on.
    pub fn validate(&self) -> crate::Result<()> {
        for (ci, comp) in self.components.iter().enumerate() {
            if comp.blocks.len() != comp.blocks_wide * comp.blocks_high {
                return Err(crate::Error::contract(format!(
                    "component {ci}: {} blocks for a {}x{} grid",
                    comp.blocks.len(),
                    comp.blocks_wide,
                    comp.blocks_high
                )));
            }
            for (bi, b) in comp.blocks.iter().enumerate() {
                let cover = b.coverage();
                let bad_pair = b.pairs.iter().any(|p| p.r > 15 || (p.v == 0 && !p.is_zrl()));
                if cover > AC_COUNT || bad_pair || b.eob_present == (cover == AC_COUNT) {
                    return Err(crate::Error::contract(format!(
                        "component {ci} block {bi}: malformed pair list"
                    )));
                }
                if b.dc.group > 15 || (b.dc.bits as u32) >> b.dc.group != 0 {
                    return Err(crate::Error::contract(format!(
                        "component {ci} block {bi}: malformed DC code"
                    )));
                }
            }
        }
        Ok(())
    }
}
