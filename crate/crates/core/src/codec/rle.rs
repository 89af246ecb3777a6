//! Zig-zag ordered AC coefficients <-> run-length pairs.

use super::{RvPair, AC_COUNT};
use crate::error::{Error, Result};

/// Run-length encodes 63 zig-zag ordered AC coefficients.
///
/// Returns the pairs (ZRL included, EOB excluded) and whether an EOB is needed.
pub fn pairs_from_zigzag(ac: &[i16; AC_COUNT]) -> (Vec<RvPair>, bool) {
    let mut pairs = Vec::new();
    let mut run = 0u8;
    for &v in ac {
        if v == 0 {
            run += 1;
            continue;
        }
        while run > 15 {
            pairs.push(RvPair::ZRL);
            run -= 16;
        }
        pairs.push(RvPair::new(run, v));
        run = 0;
    }
    (pairs, run > 0)
}

/// Expands pairs back into 63 zig-zag ordered coefficients.
pub fn zigzag_from_pairs(pairs: &[RvPair], eob_present: bool) -> Result<[i16; AC_COUNT]> {
    let mut out = [0i16; AC_COUNT];
    let mut k = 0usize;
    for (i, p) in pairs.iter().enumerate() {
        if p.r > 15 || (p.v == 0 && !p.is_zrl()) {
            return Err(Error::format(i, format!("invalid pair ({}, {})", p.r, p.v)));
        }
        k += p.span();
        if k > AC_COUNT {
            return Err(Error::format(i, "pairs overflow 63 coefficients"));
        }
        out[k - 1] = p.v;
    }
    if !eob_present && k != AC_COUNT {
        return Err(Error::format(pairs.len(), "block without EOB does not fill 63 coefficients"));
    }
    Ok(out)
}
