//! Line-oriented text dump of a [`CoeffImage`], used for golden files.
//!
//! One block per line, tab separated:
//! `component  index  g_DC  dc-bits  pairs  terminator`
//! where dc-bits is `-` for group 0, pairs are `r,v` tokens separated by
//! spaces (`-` when empty) and the terminator is `EOB` or `FULL`.

use std::fmt::Write;

use super::CoeffImage;
use crate::Component;

pub fn dump(img: &CoeffImage) -> String {
    let mut out = String::new();
    for c in Component::ALL {
        for (i, b) in img.component(c).blocks.iter().enumerate() {
            let bits = if b.dc.group == 0 { "-".to_string() } else { b.dc.bit_string() };
            let pairs = if b.pairs.is_empty() {
                "-".to_string()
            } else {
                b.pairs.iter().map(|p| format!("{},{}", p.r, p.v)).collect::<Vec<_>>().join(" ")
            };
            let term = if b.eob_present { "EOB" } else { "FULL" };
            let _ = writeln!(out, "{c}\t{i}\t{}\t{bits}\t{pairs}\t{term}", b.dc.group);
        }
    }
    out
}
