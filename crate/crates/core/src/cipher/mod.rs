//! Coefficient-domain image encryption.
//!
//! Encryption runs three stages in a fixed order: block permutation per
//! component, permutation of the `(r, v)` pairs inside each block, and value
//! substitution (in-range AC values through a per-owner table, DC bits masked
//! with a per-image keystream and re-coded with a substituted length).

mod container;
mod strength;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::codec::{decode_jpeg, encode_jpeg, CoeffImage, VliCode};
use crate::error::{Error, Result};
use crate::perm::{dec_perm, enc_perm, rand_perm, stm_ciph, DomainTag, Permutation, SeedKey};
use crate::Component;

pub use strength::{alphabet_chi2, log2_factorial, security_strength, SecurityStrength, PAPER_FEATURE_BITS};

/// The 20 AC values covered by the substitution tables, in table order.
pub const ALPHABET: [i16; 20] = [
    -10, -9, -8, -7, -6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
];

/// Number of DC lengths covered by the length tables (`0..=9`).
pub const DC_LEN_DOMAIN: usize = 10;

const KEYSTREAM_BITS: usize = 16;

/// Position of `v` in [`ALPHABET`], if the tables cover it.
pub fn alphabet_index(v: i16) -> Option<usize> {
    match v {
        -10..=-1 => Some((v + 10) as usize),
        1..=10 => Some((v + 9) as usize),
        _ => None,
    }
}

pub(crate) fn tag_for(iid: &str, c: Component, j: usize) -> DomainTag {
    DomainTag::new().str(iid).str(&c.to_string()).num(j as u64)
}

/// Table selection for block `i` (zero-based): cyclic over the table count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqntTable {
    pub n_pmt1: usize,
    pub n_pmt2: usize,
}

impl SqntTable {
    pub fn value_table(&self, i: usize) -> usize {
        i % self.n_pmt1
    }

    pub fn length_table(&self, i: usize) -> usize {
        i % self.n_pmt2
    }
}

/// Seeds of an owner's value key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValSeeds {
    pub key_v: [SeedKey; 3],
    pub key_l: [SeedKey; 3],
}

impl ValSeeds {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        ValSeeds {
            key_v: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_v/{c}"))),
            key_l: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_l/{c}"))),
        }
    }
}

/// Per-owner substitution tables: `pmtv[c][t]` over [`ALPHABET`] and
/// `pmt_dcl[c][t]` over DC lengths `0..=9`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValKey {
    pub pmtv: [Vec<Permutation>; 3],
    pub pmt_dcl: [Vec<Permutation>; 3],
}

pub fn gen_val_key(seeds: &ValSeeds, n_pmt1: usize, n_pmt2: usize) -> Result<ValKey> {
    if n_pmt1 == 0 || n_pmt2 == 0 {
        return Err(Error::Range("table counts must be at least 1".into()));
    }
    let mut pmtv: [Vec<Permutation>; 3] = Default::default();
    let mut pmt_dcl: [Vec<Permutation>; 3] = Default::default();
    for c in Component::ALL {
        for t in 0..n_pmt1 {
            let tag = DomainTag::new().str("pmtv").num(t as u64);
            pmtv[c.index()].push(rand_perm(&seeds.key_v[c.index()], ALPHABET.len(), &tag)?);
        }
        for t in 0..n_pmt2 {
            let tag = DomainTag::new().str("pmtDCL").num(t as u64);
            pmt_dcl[c.index()].push(rand_perm(&seeds.key_l[c.index()], DC_LEN_DOMAIN, &tag)?);
        }
    }
    Ok(ValKey { pmtv, pmt_dcl })
}

impl ValKey {
    pub fn n_pmt1(&self) -> usize {
        self.pmtv[0].len()
    }

    pub fn n_pmt2(&self) -> usize {
        self.pmt_dcl[0].len()
    }

    pub fn sqnt(&self) -> SqntTable {
        SqntTable { n_pmt1: self.n_pmt1(), n_pmt2: self.n_pmt2() }
    }

    pub fn validate(&self) -> Result<()> {
        let (n1, n2) = (self.n_pmt1(), self.n_pmt2());
        if n1 == 0 || n2 == 0 {
            return Err(Error::contract("value key without tables"));
        }
        for c in 0..3 {
            if self.pmtv[c].len() != n1 || self.pmt_dcl[c].len() != n2 {
                return Err(Error::contract("value key table counts differ between components"));
            }
            for p in &self.pmtv[c] {
                Permutation::new(p.as_slice().to_vec())?;
                if p.len() != ALPHABET.len() {
                    return Err(Error::contract("value table of wrong length"));
                }
            }
            for p in &self.pmt_dcl[c] {
                Permutation::new(p.as_slice().to_vec())?;
                if p.len() != DC_LEN_DOMAIN {
                    return Err(Error::contract("length table of wrong length"));
                }
            }
        }
        Ok(())
    }

    /// `pmtv[c][t][v]`; values outside the alphabet (including 0) pass through.
    pub fn substitute(&self, c: Component, t: usize, v: i16) -> i16 {
        match alphabet_index(v) {
            Some(i) => ALPHABET[self.pmtv[c.index()][t].at(i)],
            None => v,
        }
    }

    /// Encrypted DC length for plaintext length `g`; lengths above 9 pass through.
    pub fn dc_len(&self, c: Component, t: usize, g: u8) -> u8 {
        if (g as usize) < DC_LEN_DOMAIN {
            self.pmt_dcl[c.index()][t].at(g as usize) as u8
        } else {
            g
        }
    }

    fn inverses(&self) -> [Vec<Permutation>; 3] {
        [0, 1, 2].map(|c| self.pmtv[c].iter().map(Permutation::inverse).collect())
    }
}

/// Fresh per-image seeds for the position stages and the DC keystream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosSeeds {
    pub key_blo: [SeedKey; 3],
    pub key_inblo: [SeedKey; 3],
    pub key_dc: [SeedKey; 3],
}

impl PosSeeds {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        PosSeeds {
            key_blo: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_blo/{c}"))),
            key_inblo: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_inblo/{c}"))),
            key_dc: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_dc/{c}"))),
        }
    }
}

/// One-time position key of an encrypted image.
///
/// `pmtp[c][j]`, `bitkey[c][j]` and `plain_dc_len[c][j]` are indexed by the
/// block position `j` in the ciphertext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosKey {
    pub pmtb: [Permutation; 3],
    pub pmtp: [Vec<Permutation>; 3],
    pub bitkey: [Vec<BitString>; 3],
    pub plain_dc_len: [Vec<u8>; 3],
}

impl PosKey {
    pub fn block_counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|c| self.pmtb[c].len())
    }

    pub fn check_shape(&self) -> Result<()> {
        for c in 0..3 {
            let n = self.pmtb[c].len();
            if self.pmtp[c].len() != n || self.bitkey[c].len() != n || self.plain_dc_len[c].len() != n {
                return Err(Error::contract(format!("position key component {c} has ragged sections")));
            }
        }
        Ok(())
    }
}

/// High bits of encrypted DC codes dropped when a re-encryption shortened
/// them, per component and block (zero where nothing was dropped).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcCarry(pub [Vec<u16>; 3]);

/// What the cloud stores: a decodable JPEG plus its identity record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedImage {
    pub iid: String,
    pub owner: String,
    /// Principal whose value key the value layer is currently under.
    pub value_scope: String,
    pub n_pmt1: usize,
    pub n_pmt2: usize,
    pub jpeg: Vec<u8>,
    pub dc_carry: Option<DcCarry>,
}

impl EncryptedImage {
    pub fn coefficients(&self) -> Result<CoeffImage> {
        decode_jpeg(&self.jpeg)
    }
}

fn block_perm_key(key_blo: &[SeedKey; 3], img: &CoeffImage, iid: &str) -> Result<[Permutation; 3]> {
    let mut out: [Permutation; 3] = Default::default();
    for c in Component::ALL {
        let n = img.component(c).blocks.len();
        out[c.index()] = rand_perm(&key_blo[c.index()], n, &tag_for(iid, c, 0))?;
    }
    Ok(out)
}

/// Reorders each component's blocks: `blk'[i] = blk[pmtb[i]]`.
pub fn block_permute(img: &CoeffImage, pmtb: &[Permutation; 3]) -> Result<CoeffImage> {
    let mut out = img.clone();
    for c in 0..3 {
        out.components[c].blocks = enc_perm(&img.components[c].blocks, &pmtb[c])?;
    }
    Ok(out)
}

pub fn block_unpermute(img: &CoeffImage, pmtb: &[Permutation; 3]) -> Result<CoeffImage> {
    let mut out = img.clone();
    for c in 0..3 {
        out.components[c].blocks = dec_perm(&img.components[c].blocks, &pmtb[c])?;
    }
    Ok(out)
}

/// Intra-block keys for the blocks as they currently stand in `img`.
fn intra_perm_key(seeds: &PosSeeds, img: &CoeffImage, iid: &str) -> Result<[Vec<Permutation>; 3]> {
    let mut out: [Vec<Permutation>; 3] = Default::default();
    for c in Component::ALL {
        for (j, b) in img.component(c).blocks.iter().enumerate() {
            let p = match b.size() {
                0 => Permutation::identity(0),
                s => rand_perm(&seeds.key_inblo[c.index()], s, &tag_for(iid, c, j))?,
            };
            out[c.index()].push(p);
        }
    }
    Ok(out)
}

fn check_intra_shape(img: &CoeffImage, pmtp: &[Vec<Permutation>; 3]) -> Result<()> {
    for c in 0..3 {
        if pmtp[c].len() != img.components[c].blocks.len() {
            return Err(Error::contract(format!("component {c}: intra-block key count mismatch")));
        }
    }
    Ok(())
}

/// Reorders the pairs inside every block: `blk'[j][i] = blk[j][pmtp[j][i]]`.
pub fn intra_block_permute(img: &CoeffImage, pmtp: &[Vec<Permutation>; 3]) -> Result<CoeffImage> {
    check_intra_shape(img, pmtp)?;
    let mut out = img.clone();
    for c in 0..3 {
        for (b, p) in out.components[c].blocks.iter_mut().zip(&pmtp[c]) {
            b.pairs = enc_perm(&b.pairs, p)?;
        }
    }
    Ok(out)
}

pub fn intra_block_unpermute(img: &CoeffImage, pmtp: &[Vec<Permutation>; 3]) -> Result<CoeffImage> {
    check_intra_shape(img, pmtp)?;
    let mut out = img.clone();
    for c in 0..3 {
        for (b, p) in out.components[c].blocks.iter_mut().zip(&pmtp[c]) {
            b.pairs = dec_perm(&b.pairs, p)?;
        }
    }
    Ok(out)
}

/// Per-block DC masks produced by [`value_substitute`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DcMasks {
    pub bitkey: [Vec<BitString>; 3],
    pub plain_dc_len: [Vec<u8>; 3],
}

/// Substitutes AC values and masks DC codes. `key_dc` drives the per-block
/// keystream; the masks needed to undo the DC layer are returned.
pub fn value_substitute(
    img: &CoeffImage,
    valkey: &ValKey,
    key_dc: &[SeedKey; 3],
    iid: &str,
) -> Result<(CoeffImage, DcMasks)> {
    valkey.validate()?;
    let sqnt = valkey.sqnt();
    let mut out = img.clone();
    let mut masks = DcMasks::default();
    for c in Component::ALL {
        let ci = c.index();
        for (i, b) in out.components[ci].blocks.iter_mut().enumerate() {
            let t1 = sqnt.value_table(i);
            for p in b.pairs.iter_mut() {
                p.v = valkey.substitute(c, t1, p.v);
            }
            let g = b.dc.group;
            let l = valkey.dc_len(c, sqnt.length_table(i), g);
            let stream = stm_ciph(&key_dc[ci], KEYSTREAM_BITS, &tag_for(iid, c, i))?;
            let enc = stream.suffix(l as usize).to_u64() as u16;
            let width = g.max(l) as usize;
            masks.bitkey[ci].push(BitString::from_u64((enc ^ b.dc.bits) as u64, width));
            masks.plain_dc_len[ci].push(g);
            b.dc = VliCode::new(l, enc)?;
        }
    }
    Ok((out, masks))
}

/// Inverse of [`value_substitute`] given the masks (and any carried DC bits).
pub fn value_unsubstitute(
    img: &CoeffImage,
    valkey: &ValKey,
    masks: &DcMasks,
    carry: Option<&DcCarry>,
) -> Result<CoeffImage> {
    valkey.validate()?;
    let sqnt = valkey.sqnt();
    let inv = valkey.inverses();
    let mut out = img.clone();
    for c in Component::ALL {
        let ci = c.index();
        let n = out.components[ci].blocks.len();
        if masks.bitkey[ci].len() != n || masks.plain_dc_len[ci].len() != n {
            return Err(Error::KeyMismatch(format!("component {c}: {n} blocks but key covers another count")));
        }
        if let Some(k) = carry {
            if k.0[ci].len() != n {
                return Err(Error::KeyMismatch(format!("component {c}: DC carry count mismatch")));
            }
        }
        for (i, b) in out.components[ci].blocks.iter_mut().enumerate() {
            let table = &inv[ci][sqnt.value_table(i)];
            for p in b.pairs.iter_mut() {
                if let Some(e) = alphabet_index(p.v) {
                    p.v = ALPHABET[table.at(e)];
                }
            }
            let key = &masks.bitkey[ci][i];
            let g = masks.plain_dc_len[ci][i];
            let high = carry.map_or(0, |k| k.0[ci][i] as u64);
            let s = (b.dc.bits as u64) | (high << b.dc.group);
            if key.len() > 16 || s >> key.len() != 0 {
                return Err(Error::KeyMismatch(format!("component {c} block {i}: DC code wider than its mask")));
            }
            let x = s ^ key.to_u64();
            if g > 15 || x >> g != 0 {
                return Err(Error::KeyMismatch(format!("component {c} block {i}: DC mask does not fit")));
            }
            b.dc = VliCode::new(g, x as u16)?;
        }
    }
    Ok(out)
}

/// Runs the three stages with explicit per-image seeds.
pub fn encrypt_coeffs(
    img: &CoeffImage,
    iid: &str,
    valkey: &ValKey,
    seeds: &PosSeeds,
) -> Result<(CoeffImage, PosKey)> {
    img.validate()?;
    let pmtb = block_perm_key(&seeds.key_blo, img, iid)?;
    let stage1 = block_permute(img, &pmtb)?;
    let pmtp = intra_perm_key(seeds, &stage1, iid)?;
    let stage2 = intra_block_permute(&stage1, &pmtp)?;
    let (stage3, masks) = value_substitute(&stage2, valkey, &seeds.key_dc, iid)?;
    let poskey = PosKey { pmtb, pmtp, bitkey: masks.bitkey, plain_dc_len: masks.plain_dc_len };
    Ok((stage3, poskey))
}

/// Inverse of [`encrypt_coeffs`].
pub fn decrypt_coeffs(
    enc: &CoeffImage,
    poskey: &PosKey,
    valkey: &ValKey,
    carry: Option<&DcCarry>,
) -> Result<CoeffImage> {
    poskey.check_shape().map_err(|e| Error::KeyMismatch(e.to_string()))?;
    if poskey.block_counts() != enc.block_counts() {
        return Err(Error::KeyMismatch("block counts differ from the position key".into()));
    }
    for c in 0..3 {
        for (j, (b, p)) in enc.components[c].blocks.iter().zip(&poskey.pmtp[c]).enumerate() {
            if b.size() != p.len() {
                return Err(Error::KeyMismatch(format!("component {c} block {j}: pair count differs")));
            }
        }
    }
    let masks = DcMasks { bitkey: poskey.bitkey.clone(), plain_dc_len: poskey.plain_dc_len.clone() };
    let stage2 = value_unsubstitute(enc, valkey, &masks, carry)?;
    let stage1 = intra_block_unpermute(&stage2, &poskey.pmtp)?;
    let plain = block_unpermute(&stage1, &poskey.pmtb)?;
    plain.validate().map_err(|e| Error::KeyMismatch(e.to_string()))?;
    Ok(plain)
}

/// Encrypts one image with fresh position seeds and encodes it as JPEG.
pub fn img_enc<R: RngCore + CryptoRng>(
    img: &CoeffImage,
    iid: &str,
    owner: &str,
    valkey: &ValKey,
    rng: &mut R,
) -> Result<(EncryptedImage, PosKey)> {
    let seeds = PosSeeds::generate(rng);
    let (enc, poskey) = encrypt_coeffs(img, iid, valkey, &seeds)?;
    let out = EncryptedImage {
        iid: iid.to_string(),
        owner: owner.to_string(),
        value_scope: owner.to_string(),
        n_pmt1: valkey.n_pmt1(),
        n_pmt2: valkey.n_pmt2(),
        jpeg: encode_jpeg(&enc)?,
        dc_carry: None,
    };
    Ok((out, poskey))
}

pub fn img_dec(enc: &EncryptedImage, poskey: &PosKey, valkey: &ValKey) -> Result<CoeffImage> {
    if (enc.n_pmt1, enc.n_pmt2) != (valkey.n_pmt1(), valkey.n_pmt2()) {
        return Err(Error::KeyMismatch("value key table counts differ from the ciphertext".into()));
    }
    decrypt_coeffs(&enc.coefficients()?, poskey, valkey, enc.dc_carry.as_ref())
}

/// Encrypted query addressed to one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trapdoor {
    pub owner: String,
    pub image: EncryptedImage,
}

/// Encrypts the query once per authorized source: the full pipeline under
/// that source's value key, then one more block permutation. No key is kept.
pub fn trap_gen<R: RngCore + CryptoRng>(
    query: &CoeffImage,
    authorized: &[(String, &ValKey)],
    rng: &mut R,
) -> Result<Vec<Trapdoor>> {
    if authorized.is_empty() {
        return Err(Error::contract("trapdoor generation needs at least one authorization"));
    }
    let mut out = Vec::with_capacity(authorized.len());
    for (owner, valkey) in authorized {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let iid = format!("query-{}", hex::encode(nonce));
        let seeds = PosSeeds::generate(rng);
        let (enc, _) = encrypt_coeffs(query, &iid, valkey, &seeds)?;
        let extra = Component::ALL.map(|c| SeedKey::generate(rng, format!("key_blo/{c}")));
        let pmtb = block_perm_key(&extra, &enc, &iid)?;
        let shuffled = block_permute(&enc, &pmtb)?;
        out.push(Trapdoor {
            owner: owner.clone(),
            image: EncryptedImage {
                iid,
                owner: owner.clone(),
                value_scope: owner.clone(),
                n_pmt1: valkey.n_pmt1(),
                n_pmt2: valkey.n_pmt2(),
                jpeg: encode_jpeg(&shuffled)?,
                dc_carry: None,
            },
        });
    }
    Ok(out)
}
