use std::collections::BTreeSet;

use super::bitio::BitWriter;
use super::huffman::{standard_table, HuffmanEncoder, HuffmanSpec, TableClass};
use super::vli::vli_encode;
use super::CoeffImage;
use crate::error::{Error, Result};

/// Symbols each Huffman table must be able to code for this image.
fn required_symbols(img: &CoeffImage) -> Result<Vec<((TableClass, u8), BTreeSet<u8>)>> {
    let mut need: Vec<((TableClass, u8), BTreeSet<u8>)> = Vec::new();
    fn slot(need: &mut Vec<((TableClass, u8), BTreeSet<u8>)>, key: (TableClass, u8)) -> usize {
        match need.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                need.push((key, BTreeSet::new()));
                need.len() - 1
            }
        }
    }
    for comp in &img.components {
        let dc = slot(&mut need, (TableClass::Dc, comp.dc_table));
        let ac = slot(&mut need, (TableClass::Ac, comp.ac_table));
        for b in &comp.blocks {
            if b.dc.group > 11 {
                return Err(Error::Encoding(format!("DC group {} has no baseline code", b.dc.group)));
            }
            need[dc].1.insert(b.dc.group);
            for p in &b.pairs {
                let sym = if p.is_zrl() {
                    0xF0
                } else {
                    let code = vli_encode(p.v as i32)?;
                    if code.group > 10 {
                        return Err(Error::Encoding(format!("AC value {} exceeds baseline range", p.v)));
                    }
                    p.r << 4 | code.group
                };
                need[ac].1.insert(sym);
            }
            if b.eob_present {
                need[ac].1.insert(0x00);
            }
        }
    }
    Ok(need)
}

/// Tables actually written: the source tables, except that a table missing a
/// needed symbol is replaced by the standard table of its class.
fn effective_tables(img: &CoeffImage) -> Result<Vec<HuffmanSpec>> {
    let mut out = img.tables.huffman.clone();
    for ((class, id), symbols) in required_symbols(img)? {
        match out.iter_mut().find(|t| t.class == class && t.id == id) {
            Some(t) => {
                if !symbols.iter().all(|&s| t.contains(s)) {
                    *t = standard_table(class, id);
                }
            }
            None => out.push(standard_table(class, id)),
        }
    }
    Ok(out)
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) -> Result<()> {
    let len = payload.len() + 2;
    if len > u16::MAX as usize {
        return Err(Error::Encoding(format!("segment {marker:#04x} too long")));
    }
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(())
}

/// Writes a baseline JPEG from the coefficient model.
pub fn encode_jpeg(img: &CoeffImage) -> Result<Vec<u8>> {
    img.validate()?;
    let huffman = effective_tables(img)?;
    let mut out = vec![0xFF, 0xD8];
    for (marker, payload) in &img.extra_segments {
        segment(&mut out, *marker, payload)?;
    }
    for q in &img.tables.quant {
        let mut p = vec![q.precision << 4 | q.id];
        for &v in &q.values {
            if q.precision == 0 {
                p.push(v as u8);
            } else {
                p.extend_from_slice(&v.to_be_bytes());
            }
        }
        segment(&mut out, 0xDB, &p)?;
    }

    let mut sof = vec![8];
    sof.extend_from_slice(&img.height.to_be_bytes());
    sof.extend_from_slice(&img.width.to_be_bytes());
    sof.push(3);
    for c in &img.components {
        sof.extend_from_slice(&[c.id, c.h_samp << 4 | c.v_samp, c.quant_table]);
    }
    segment(&mut out, img.sof_marker, &sof)?;

    for t in &huffman {
        let mut p = vec![t.class.code() << 4 | t.id];
        p.extend_from_slice(&t.counts);
        p.extend_from_slice(&t.symbols);
        segment(&mut out, 0xC4, &p)?;
    }

    let mut sos = vec![3];
    for c in &img.components {
        sos.extend_from_slice(&[c.id, c.dc_table << 4 | c.ac_table]);
    }
    sos.extend_from_slice(&[0, 63, 0]);
    segment(&mut out, 0xDA, &sos)?;

    let find = |class: TableClass, id: u8| {
        huffman
            .iter()
            .find(|t| t.class == class && t.id == id)
            .map(HuffmanEncoder::new)
            .ok_or_else(|| Error::Encoding(format!("no {class:?} table {id}")))
    };
    let mut coders = Vec::with_capacity(3);
    for c in &img.components {
        coders.push((find(TableClass::Dc, c.dc_table)?, find(TableClass::Ac, c.ac_table)?));
    }

    let per_mcu: Vec<usize> = img.components.iter().map(|c| c.h_samp as usize * c.v_samp as usize).collect();
    let mcus = img.components[0].blocks.len() / per_mcu[0];
    for (ci, c) in img.components.iter().enumerate() {
        if c.blocks.len() != mcus * per_mcu[ci] {
            return Err(Error::contract(format!("component {ci} block count does not match MCU layout")));
        }
    }

    let mut w = BitWriter::new();
    for m in 0..mcus {
        for (ci, comp) in img.components.iter().enumerate() {
            let (dc, ac) = &coders[ci];
            for b in &comp.blocks[m * per_mcu[ci]..(m + 1) * per_mcu[ci]] {
                dc.emit(&mut w, b.dc.group)?;
                w.write(b.dc.bits as u32, b.dc.group);
                for p in &b.pairs {
                    if p.is_zrl() {
                        ac.emit(&mut w, 0xF0)?;
                    } else {
                        let code = vli_encode(p.v as i32)?;
                        ac.emit(&mut w, p.r << 4 | code.group)?;
                        w.write(code.bits as u32, code.group);
                    }
                }
                if b.eob_present {
                    ac.emit(&mut w, 0x00)?;
                }
            }
        }
    }
    out.extend_from_slice(&w.finish());
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}
