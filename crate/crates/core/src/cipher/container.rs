//! Binary key containers.
//!
//! Layout: 4-byte magic, big-endian `u16` version, then per-component
//! sections. Permutations are a `u32` length followed by `u32` entries;
//! bit strings are a `u8` bit length followed by their packed bytes.

use super::{PosKey, ValKey};
use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::perm::Permutation;

const VAL_MAGIC: &[u8; 4] = b"CCVK";
const POS_MAGIC: &[u8; 4] = b"CCPK";
const VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut out = magic.to_vec();
        out.extend_from_slice(&VERSION.to_be_bytes());
        Writer(out)
    }

    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_be_bytes());
    }

    fn perm(&mut self, p: &Permutation) {
        self.u32(p.len());
        for &k in p.as_slice() {
            self.0.extend_from_slice(&k.to_be_bytes());
        }
    }

    fn bits(&mut self, b: &BitString) {
        self.0.push(b.len() as u8);
        self.0.extend_from_slice(b.as_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != magic {
            return Err(Error::format(0, "bad container magic"));
        }
        let version = u16::from_be_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(4, format!("unknown container version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(self.pos, "container truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn perm(&mut self) -> Result<Permutation> {
        let at = self.pos;
        let n = self.u32()?;
        if n > (self.data.len() - self.pos) / 4 {
            return Err(Error::format(at, "permutation length exceeds container"));
        }
        let raw = self.take(4 * n)?;
        let mapping = raw.chunks_exact(4).map(|c| u32::from_be_bytes(c.try_into().unwrap())).collect();
        Permutation::new(mapping).map_err(|e| Error::format(at, e.to_string()))
    }

    fn bits(&mut self) -> Result<BitString> {
        let len = self.u8()? as usize;
        BitString::from_bytes(self.take(len.div_ceil(8))?, len)
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::format(self.pos, "trailing bytes after container"));
        }
        Ok(())
    }
}

impl ValKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(VAL_MAGIC);
        w.u32(self.n_pmt1());
        w.u32(self.n_pmt2());
        for c in 0..3 {
            self.pmtv[c].iter().for_each(|p| w.perm(p));
            self.pmt_dcl[c].iter().for_each(|p| w.perm(p));
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<ValKey> {
        let mut r = Reader::new(data, VAL_MAGIC)?;
        let (n1, n2) = (r.u32()?, r.u32()?);
        if n1 == 0 || n2 == 0 || n1 > 1 << 16 || n2 > 1 << 16 {
            return Err(Error::format(6, "implausible table counts"));
        }
        let mut key = ValKey { pmtv: Default::default(), pmt_dcl: Default::default() };
        for c in 0..3 {
            for _ in 0..n1 {
                key.pmtv[c].push(r.perm()?);
            }
            for _ in 0..n2 {
                key.pmt_dcl[c].push(r.perm()?);
            }
        }
        r.finish()?;
        key.validate()?;
        Ok(key)
    }
}

impl PosKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(POS_MAGIC);
        for c in 0..3 {
            w.perm(&self.pmtb[c]);
            w.u32(self.pmtp[c].len());
            for j in 0..self.pmtp[c].len() {
                w.perm(&self.pmtp[c][j]);
                w.bits(&self.bitkey[c][j]);
                w.0.push(self.plain_dc_len[c][j]);
            }
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<PosKey> {
        let mut r = Reader::new(data, POS_MAGIC)?;
        let mut key = PosKey {
            pmtb: Default::default(),
            pmtp: Default::default(),
            bitkey: Default::default(),
            plain_dc_len: Default::default(),
        };
        for c in 0..3 {
            key.pmtb[c] = r.perm()?;
            let at = r.pos;
            let n = r.u32()?;
            if n != key.pmtb[c].len() {
                return Err(Error::format(at, "block count differs from block permutation"));
            }
            for _ in 0..n {
                key.pmtp[c].push(r.perm()?);
                key.bitkey[c].push(r.bits()?);
                key.plain_dc_len[c].push(r.u8()?);
            }
        }
        r.finish()?;
        Ok(key)
    }
}
