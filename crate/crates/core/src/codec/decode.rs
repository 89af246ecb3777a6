use super::bitio::BitReader;
use super::huffman::{HuffmanDecoder, HuffmanSpec, TableClass};
use super::{Block, CoeffImage, ComponentData, JpegTables, QuantTable, RvPair, VliCode, AC_COUNT};
use crate::error::{Error, Result};

struct FrameComponent {
    id: u8,
    h: u8,
    v: u8,
    tq: u8,
}

struct Frame {
    marker: u8,
    width: u16,
    height: u16,
    comps: Vec<FrameComponent>,
}

fn be16(data: &[u8], at: usize) -> Result<u16> {
    match data.get(at..at + 2) {
        Some(b) => Ok(u16::from_be_bytes([b[0], b[1]])),
        None => Err(Error::format(at, "unexpected end of data")),
    }
}

/// Parses a baseline, Huffman-coded, three-component JPEG into coefficient form.
pub fn decode_jpeg(data: &[u8]) -> Result<CoeffImage> {
    if data.len() < 2 || data[0] != 0xFF || data[1] != 0xD8 {
        return Err(Error::format(0, "missing SOI marker"));
    }
    let mut pos = 2;
    let mut tables = JpegTables::default();
    let mut extra = Vec::new();
    let mut frame: Option<Frame> = None;
    let mut image: Option<CoeffImage> = None;

    loop {
        if pos >= data.len() {
            return Err(Error::format(pos, "missing EOI marker"));
        }
        if data[pos] != 0xFF {
            return Err(Error::format(pos, format!("expected marker, found {:#04x}", data[pos])));
        }
        while pos < data.len() && data[pos] == 0xFF {
            pos += 1;
        }
        let Some(&marker) = data.get(pos) else {
            return Err(Error::format(pos, "truncated marker"));
        };
        pos += 1;
        if marker == 0xD9 {
            break;
        }
        if (0xD0..=0xD7).contains(&marker) {
            return Err(Error::Unsupported("restart markers".into()));
        }
        if marker == 0xD8 || marker == 0x01 {
            return Err(Error::format(pos - 1, format!("unexpected marker {marker:#04x}")));
        }
        let len = be16(data, pos)? as usize;
        if len < 2 || pos + len > data.len() {
            return Err(Error::format(pos, "segment runs past end of data"));
        }
        let seg = &data[pos + 2..pos + len];
        let seg_start = pos + 2;
        pos += len;
        match marker {
            0xC0 | 0xC1 => {
                if frame.is_some() {
                    return Err(Error::format(seg_start, "second frame header"));
                }
                frame = Some(parse_sof(marker, seg, seg_start)?);
            }
            0xC2 | 0xC6 | 0xCA | 0xCE => return Err(Error::Unsupported("progressive JPEG".into())),
            0xC9 | 0xCB | 0xCD | 0xCC => return Err(Error::Unsupported("arithmetic coding".into())),
            0xC3 | 0xC5 | 0xC7 | 0xCF => {
                return Err(Error::Unsupported("lossless or hierarchical JPEG".into()))
            }
            0xC4 => parse_dht(seg, seg_start, &mut tables)?,
            0xDB => parse_dqt(seg, seg_start, &mut tables)?,
            0xDD => {
                if be16(seg, 0)? != 0 {
                    return Err(Error::Unsupported("restart intervals".into()));
                }
            }
            0xDA => {
                if image.is_some() {
                    return Err(Error::Unsupported("multi-scan JPEG".into()));
                }
                let f = frame.as_ref().ok_or_else(|| Error::format(seg_start, "scan before frame header"))?;
                let (img, end) = decode_scan(data, seg, seg_start, pos, f, &tables, &extra)?;
                image = Some(img);
                pos = end;
            }
            0xE0..=0xEF | 0xFE => extra.push((marker, seg.to_vec())),
            _ => {}
        }
    }
    let mut img = image.ok_or_else(|| Error::format(pos, "no scan data"))?;
    // Tables defined after the scan (legal but unusual) are kept too.
    img.tables = tables;
    img.extra_segments = extra;
    Ok(img)
}

fn parse_sof(marker: u8, seg: &[u8], at: usize) -> Result<Frame> {
    if seg.len() < 6 {
        return Err(Error::format(at, "short frame header"));
    }
    if seg[0] != 8 {
        return Err(Error::Unsupported(format!("{}-bit samples", seg[0])));
    }
    let height = be16(seg, 1)?;
    let width = be16(seg, 3)?;
    let n = seg[5] as usize;
    if n != 3 {
        return Err(Error::Unsupported(format!("{n}-component image (only YUV is supported)")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Unsupported("zero image dimension".into()));
    }
    if seg.len() < 6 + 3 * n {
        return Err(Error::format(at, "short frame header"));
    }
    let comps = (0..n)
        .map(|i| {
            let b = &seg[6 + 3 * i..9 + 3 * i];
            FrameComponent { id: b[0], h: b[1] >> 4, v: b[1] & 15, tq: b[2] }
        })
        .collect::<Vec<_>>();
    if comps.iter().any(|c| !(1..=4).contains(&c.h) || !(1..=4).contains(&c.v)) {
        return Err(Error::format(at, "invalid sampling factor"));
    }
    Ok(Frame { marker, width, height, comps })
}

fn parse_dht(seg: &[u8], at: usize, tables: &mut JpegTables) -> Result<()> {
    let mut p = 0;
    while p < seg.len() {
        if p + 17 > seg.len() {
            return Err(Error::format(at + p, "short DHT segment"));
        }
        let class = match seg[p] >> 4 {
            0 => TableClass::Dc,
            1 => TableClass::Ac,
            _ => return Err(Error::format(at + p, "invalid Huffman table class")),
        };
        let id = seg[p] & 15;
        let mut counts = [0u8; 16];
        counts.copy_from_slice(&seg[p + 1..p + 17]);
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if p + 17 + total > seg.len() {
            return Err(Error::format(at + p, "short DHT segment"));
        }
        let spec = HuffmanSpec { class, id, counts, symbols: seg[p + 17..p + 17 + total].to_vec() };
        spec.validate(at + p)?;
        tables.huffman.retain(|t| !(t.class == class && t.id == id));
        tables.huffman.push(spec);
        p += 17 + total;
    }
    Ok(())
}

fn parse_dqt(seg: &[u8], at: usize, tables: &mut JpegTables) -> Result<()> {
    let mut p = 0;
    while p < seg.len() {
        let precision = seg[p] >> 4;
        let id = seg[p] & 15;
        let width = if precision == 0 { 1 } else { 2 };
        if p + 1 + 64 * width > seg.len() {
            return Err(Error::format(at + p, "short DQT segment"));
        }
        let values = (0..64)
            .map(|i| {
                let o = p + 1 + i * width;
                if width == 1 {
                    seg[o] as u16
                } else {
                    u16::from_be_bytes([seg[o], seg[o + 1]])
                }
            })
            .collect();
        tables.quant.retain(|q| q.id != id);
        tables.quant.push(QuantTable { id, precision, values });
        p += 1 + 64 * width;
    }
    Ok(())
}

fn decode_scan(
    data: &[u8],
    seg: &[u8],
    at: usize,
    scan_start: usize,
    frame: &Frame,
    tables: &JpegTables,
    extra: &[(u8, Vec<u8>)],
) -> Result<(CoeffImage, usize)> {
    let ns = *seg.first().ok_or_else(|| Error::format(at, "empty SOS"))? as usize;
    if ns != 3 {
        return Err(Error::Unsupported("non-interleaved scans".into()));
    }
    if seg.len() < 1 + 2 * ns + 3 {
        return Err(Error::format(at, "short SOS segment"));
    }
    let mut selectors = Vec::with_capacity(3);
    for i in 0..ns {
        let id = seg[1 + 2 * i];
        let tdta = seg[2 + 2 * i];
        if frame.comps[i].id != id {
            return Err(Error::Unsupported("scan component order differs from frame".into()));
        }
        selectors.push((tdta >> 4, tdta & 15));
    }
    let tail = &seg[1 + 2 * ns..];
    if tail[0] != 0 || tail[1] != 63 || tail[2] != 0 {
        return Err(Error::Unsupported("spectral selection or successive approximation".into()));
    }

    let hmax = frame.comps.iter().map(|c| c.h).max().unwrap_or(1) as usize;
    let vmax = frame.comps.iter().map(|c| c.v).max().unwrap_or(1) as usize;
    let mcux = (frame.width as usize).div_ceil(8 * hmax);
    let mcuy = (frame.height as usize).div_ceil(8 * vmax);

    let mut decoders = Vec::with_capacity(3);
    for &(td, ta) in &selectors {
        let dc = tables
            .huffman(TableClass::Dc, td)
            .ok_or_else(|| Error::format(at, format!("missing DC Huffman table {td}")))?;
        let ac = tables
            .huffman(TableClass::Ac, ta)
            .ok_or_else(|| Error::format(at, format!("missing AC Huffman table {ta}")))?;
        decoders.push((HuffmanDecoder::new(dc), HuffmanDecoder::new(ac)));
    }

    let mut blocks: Vec<Vec<Block>> = frame
        .comps
        .iter()
        .map(|c| Vec::with_capacity(mcux * mcuy * c.h as usize * c.v as usize))
        .collect();
    let mut reader = BitReader::new(data, scan_start);
    for _ in 0..mcux * mcuy {
        for (ci, comp) in frame.comps.iter().enumerate() {
            let (dc, ac) = &decoders[ci];
            for _ in 0..comp.h as usize * comp.v as usize {
                blocks[ci].push(decode_block(&mut reader, dc, ac)?);
            }
        }
    }
    let end = reader.finish();

    let mut comps = frame.comps.iter().zip(selectors).zip(blocks).map(|((f, (td, ta)), blocks)| {
        ComponentData {
            id: f.id,
            h_samp: f.h,
            v_samp: f.v,
            quant_table: f.tq,
            dc_table: td,
            ac_table: ta,
            blocks_wide: mcux * f.h as usize,
            blocks_high: mcuy * f.v as usize,
            blocks,
        }
    });
    let components = [comps.next().unwrap(), comps.next().unwrap(), comps.next().unwrap()];
    let img = CoeffImage {
        width: frame.width,
        height: frame.height,
        sof_marker: frame.marker,
        components,
        tables: tables.clone(),
        extra_segments: extra.to_vec(),
    };
    Ok((img, end))
}

fn decode_block(reader: &mut BitReader<'_>, dc: &HuffmanDecoder, ac: &HuffmanDecoder) -> Result<Block> {
    let group = dc.decode(reader)?;
    if group > 11 {
        return Err(Error::format(reader.position(), format!("DC category {group} out of range")));
    }
    let bits = reader.read_bits(group)?;
    let dc_code = VliCode { group, bits };

    let mut pairs = Vec::new();
    let mut k = 0usize;
    let mut eob_present = false;
    while k < AC_COUNT {
        let rs = ac.decode(reader)?;
        let (r, s) = (rs >> 4, rs & 15);
        if s == 0 {
            match r {
                0 => {
                    eob_present = true;
                    break;
                }
                15 => {
                    pairs.push(RvPair::ZRL);
                    k += 16;
                    if k > AC_COUNT {
                        return Err(Error::format(reader.position(), "zero run past coefficient 63"));
                    }
                    continue;
                }
                _ => return Err(Error::format(reader.position(), format!("invalid AC symbol {rs:#04x}"))),
            }
        }
        if s > 10 {
            return Err(Error::format(reader.position(), format!("AC category {s} out of range")));
        }
        k += r as usize + 1;
        if k > AC_COUNT {
            return Err(Error::format(reader.position(), "AC coefficients past position 63"));
        }
        let bits = reader.read_bits(s)?;
        let v = super::vli::vli_decode(VliCode { group: s, bits })?;
        pairs.push(RvPair::new(r, v as i16));
    }
    Ok(Block { dc: dc_code, pairs, eob_present })
}
