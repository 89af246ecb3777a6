//! Keys over keys: user keys, the owner → KMC → user conversion chain,
//! group increment keys and the group wrap envelope.
//!
//! Position keys are never handed out in the clear. The owner stores
//! `dec(pos, U_owner)` at the KMC together with the link
//! `enc(U_owner, U_user)`; the KMC combines the two into `enc(pos, U_user)`,
//! which only the holder of `U_user` can undo.

use std::collections::BTreeMap;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::cipher::{
    alphabet_index, DcCarry, EncryptedImage, PosKey, ValKey, ALPHABET, DC_LEN_DOMAIN,
};
use crate::codec::{encode_jpeg, VliCode, AC_COUNT};
use crate::error::{Error, Result};
use crate::perm::{rand_perm, stm_ciph, DomainTag, Permutation, SeedKey};
use crate::Component;

/// Longest mask a user key covers.
pub const UBIT_MAX: usize = 16;

/// Which `ubit` length supplies the byte that masks `plain_dc_len`.
const DC_LEN_MASK_SOURCE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSeeds {
    pub key_ublo: [SeedKey; 3],
    pub key_uinblo: [SeedKey; 3],
    pub key_udc: [SeedKey; 3],
}

impl UserSeeds {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        UserSeeds {
            key_ublo: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_Ublo/{c}"))),
            key_uinblo: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_Uinblo/{c}"))),
            key_udc: Component::ALL.map(|c| SeedKey::generate(rng, format!("key_Udc/{c}"))),
        }
    }
}

/// Permutations for every pair count `1..=63`, masks for every length
/// `1..=16`, and block permutations for whichever block counts have been
/// materialized. A key built from seeds can materialize any block count;
/// a derived key (link or increment) only covers the counts it was built on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserKey {
    seeds: Option<UserSeeds>,
    upmtb: [BTreeMap<usize, Permutation>; 3],
    upmtp: [Vec<Permutation>; 3],
    ubit: [Vec<BitString>; 3],
}

pub fn gen_user_key(seeds: &UserSeeds) -> Result<UserKey> {
    let mut upmtp: [Vec<Permutation>; 3] = Default::default();
    let mut ubit: [Vec<BitString>; 3] = Default::default();
    for c in Component::ALL {
        let ci = c.index();
        for s in 1..=AC_COUNT {
            let tag = DomainTag::new().str("Upmtp").str(&c.to_string());
            upmtp[ci].push(rand_perm(&seeds.key_uinblo[ci], s, &tag)?);
        }
        for l in 1..=UBIT_MAX {
            let tag = DomainTag::new().str("UbitKey").str(&c.to_string()).num(l as u64);
            ubit[ci].push(stm_ciph(&seeds.key_udc[ci], l, &tag)?);
        }
    }
    Ok(UserKey { seeds: Some(seeds.clone()), upmtb: Default::default(), upmtp, ubit })
}

impl UserKey {
    pub fn is_derived(&self) -> bool {
        self.seeds.is_none()
    }

    pub fn seeds(&self) -> Option<&UserSeeds> {
        self.seeds.as_ref()
    }

    /// Serialized pair permutations of the largest size, one per component.
    /// They identify the key when scanning serialized state for leaks.
    pub fn markers(&self) -> Vec<String> {
        self.upmtp
            .iter()
            .filter_map(|v| v.last())
            .map(|p| serde_json::to_string(p).expect("permutation serializes"))
            .collect()
    }

    /// Block counts this key holds a permutation for, per component.
    pub fn block_sizes(&self, c: Component) -> impl Iterator<Item = usize> + '_ {
        self.upmtb[c.index()].keys().copied()
    }

    fn derive_block_perm(&self, c: Component, n: usize) -> Result<Option<Permutation>> {
        match &self.seeds {
            Some(s) => {
                let tag = DomainTag::new().str("Upmtb").str(&c.to_string());
                rand_perm(&s.key_ublo[c.index()], n, &tag).map(Some)
            }
            None => Ok(None),
        }
    }

    /// `Upmtb[c][n]`, derived on demand for seeded keys.
    pub fn block_perm(&self, c: Component, n: usize) -> Result<Permutation> {
        if let Some(p) = self.upmtb[c.index()].get(&n) {
            return Ok(p.clone());
        }
        self.derive_block_perm(c, n)?
            .ok_or_else(|| Error::contract(format!("user key has no {c} block permutation of length {n}")))
    }

    /// Stores `Upmtb[c][n]` so that derived keys built from this one cover `n`.
    pub fn materialize(&mut self, c: Component, n: usize) -> Result<()> {
        if !self.upmtb[c.index()].contains_key(&n) {
            let p = self.block_perm(c, n)?;
            self.upmtb[c.index()].insert(n, p);
        }
        Ok(())
    }

    pub fn materialize_counts(&mut self, counts: [usize; 3]) -> Result<()> {
        for c in Component::ALL {
            self.materialize(c, counts[c.index()])?;
        }
        Ok(())
    }

    pub fn pair_perm(&self, c: Component, s: usize) -> Result<&Permutation> {
        self.upmtp[c.index()]
            .get(s.wrapping_sub(1))
            .ok_or_else(|| Error::contract(format!("user key has no pair permutation of length {s}")))
    }

    pub fn mask(&self, c: Component, len: usize) -> Result<&BitString> {
        self.ubit[c.index()]
            .get(len.wrapping_sub(1))
            .ok_or_else(|| Error::contract(format!("user key has no mask of length {len}")))
    }

    fn dc_len_mask(&self, c: Component) -> u8 {
        self.ubit[c.index()][DC_LEN_MASK_SOURCE - 1].to_u64() as u8
    }

    /// Adds the block-permutation entries of `other` (a fragment built with
    /// [`user_key_enc_for`]) to this derived key.
    pub fn merge_block_perms(&mut self, other: &UserKey) -> Result<()> {
        for c in 0..3 {
            for (&n, p) in &other.upmtb[c] {
                match self.upmtb[c].get(&n) {
                    Some(q) if q != p => {
                        return Err(Error::contract("conflicting block permutation entries"));
                    }
                    _ => {
                        self.upmtb[c].insert(n, p.clone());
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Op {
    Enc,
    Dec,
}

fn apply(op: Op, data: &Permutation, key: &Permutation) -> Result<Permutation> {
    match op {
        Op::Enc => data.enc(key),
        Op::Dec => data.dec(key),
    }
}

fn combine(op: Op, a: &UserKey, b: &UserKey, only: Option<[usize; 3]>) -> Result<UserKey> {
    let mut out = UserKey {
        seeds: None,
        upmtb: Default::default(),
        upmtp: Default::default(),
        ubit: Default::default(),
    };
    for c in Component::ALL {
        let ci = c.index();
        let sizes: Vec<usize> = match only {
            Some(counts) => vec![counts[ci]],
            None => a.upmtb[ci].keys().chain(b.upmtb[ci].keys()).copied().collect(),
        };
        for n in sizes {
            out.upmtb[ci].insert(n, apply(op, &a.block_perm(c, n)?, &b.block_perm(c, n)?)?);
        }
        if a.upmtp[ci].len() != b.upmtp[ci].len() || a.ubit[ci].len() != b.ubit[ci].len() {
            return Err(Error::contract("user keys cover different size domains"));
        }
        for (p, q) in a.upmtp[ci].iter().zip(&b.upmtp[ci]) {
            out.upmtp[ci].push(apply(op, p, q)?);
        }
        for (x, y) in a.ubit[ci].iter().zip(&b.ubit[ci]) {
            out.ubit[ci].push(x.xor(y)?);
        }
    }
    Ok(out)
}

/// Entrywise `enc_perm(a, b)` and XOR, over the block counts either side has
/// materialized.
pub fn user_key_enc(a: &UserKey, b: &UserKey) -> Result<UserKey> {
    combine(Op::Enc, a, b, None)
}

/// Entrywise `dec_perm(a, b)` and XOR.
pub fn user_key_dec(a: &UserKey, b: &UserKey) -> Result<UserKey> {
    combine(Op::Dec, a, b, None)
}

/// The block-permutation entries of `user_key_enc(a, b)` for one set of
/// block counts; merged into an existing link when new sizes appear.
pub fn user_key_enc_for(a: &UserKey, b: &UserKey, counts: [usize; 3]) -> Result<UserKey> {
    combine(Op::Enc, a, b, Some(counts))
}

pub fn user_key_dec_for(a: &UserKey, b: &UserKey, counts: [usize; 3]) -> Result<UserKey> {
    combine(Op::Dec, a, b, Some(counts))
}

pub fn derive_inc_usr_key(u_oid: &UserKey, u_gid: &UserKey) -> Result<UserKey> {
    user_key_dec(u_oid, u_gid)
}

/// A position key under one or more layers of user-key encryption, bound to
/// its image and to a commitment to the plaintext key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncPosKey {
    pub iid: String,
    pub key: PosKey,
    pub commitment: String,
}

fn commitment(iid: &str, pos: &PosKey) -> String {
    let ctx = blake3::derive_key("coeffcrypt poskey commitment v1", iid.as_bytes());
    blake3::keyed_hash(&ctx, &pos.to_bytes()).to_hex().to_string()
}

fn transform(op: Op, pos: &PosKey, ukey: &UserKey) -> Result<PosKey> {
    pos.check_shape()?;
    let mut out = pos.clone();
    for c in Component::ALL {
        let ci = c.index();
        let n = pos.pmtb[ci].len();
        out.pmtb[ci] = apply(op, &pos.pmtb[ci], &ukey.block_perm(c, n)?)?;
        for j in 0..n {
            let s = pos.pmtp[ci][j].len();
            if s > 0 {
                out.pmtp[ci][j] = apply(op, &pos.pmtp[ci][j], ukey.pair_perm(c, s)?)?;
            }
            let l = pos.bitkey[ci][j].len();
            if l > 0 {
                out.bitkey[ci][j] = pos.bitkey[ci][j].xor(ukey.mask(c, l)?)?;
            }
            out.plain_dc_len[ci][j] ^= ukey.dc_len_mask(c);
        }
    }
    Ok(out)
}

/// Owner side: `pmtb' = dec_perm(pmtb, Upmtb)`, likewise for the pair
/// permutations, masks XORed.
pub fn img_key_enc(pos: &PosKey, iid: &str, ukey: &UserKey) -> Result<EncPosKey> {
    Ok(EncPosKey { iid: iid.to_string(), key: transform(Op::Dec, pos, ukey)?, commitment: commitment(iid, pos) })
}

/// KMC side: applies a link or increment key with `enc_perm`, which is
/// what collapses `dec(dec(pos, U_o) ...)` chains per the conversion law.
pub fn kmc_transform(enc: &EncPosKey, link: &UserKey) -> Result<EncPosKey> {
    Ok(EncPosKey { iid: enc.iid.clone(), key: transform(Op::Enc, &enc.key, link)?, commitment: enc.commitment.clone() })
}

/// User side: strips the user's own layer and checks the commitment.
pub fn user_recover_pos_key(enc: &EncPosKey, ukey: &UserKey) -> Result<PosKey> {
    let pos = transform(Op::Dec, &enc.key, ukey)
        .map_err(|e| Error::Tamper(format!("position key does not fit the user key: {e}")))?;
    if commitment(&enc.iid, &pos) != enc.commitment {
        return Err(Error::Tamper(format!("recovered position key for {} fails its commitment", enc.iid)));
    }
    Ok(pos)
}

/// Per-table deltas `dec_perm(owner_table, group_table)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncValKey {
    pub pmtv: [Vec<Permutation>; 3],
    pub pmt_dcl: [Vec<Permutation>; 3],
}

pub fn derive_inc_val_key(v_oid: &ValKey, v_gid: &ValKey) -> Result<IncValKey> {
    v_oid.validate()?;
    v_gid.validate()?;
    if (v_oid.n_pmt1(), v_oid.n_pmt2()) != (v_gid.n_pmt1(), v_gid.n_pmt2()) {
        return Err(Error::contract("owner and group value keys have different table counts"));
    }
    let mut inc = IncValKey { pmtv: Default::default(), pmt_dcl: Default::default() };
    for c in 0..3 {
        for (a, b) in v_oid.pmtv[c].iter().zip(&v_gid.pmtv[c]) {
            inc.pmtv[c].push(a.dec(b)?);
        }
        for (a, b) in v_oid.pmt_dcl[c].iter().zip(&v_gid.pmt_dcl[c]) {
            inc.pmt_dcl[c].push(a.dec(b)?);
        }
    }
    Ok(inc)
}

impl IncValKey {
    pub fn n_pmt1(&self) -> usize {
        self.pmtv[0].len()
    }

    pub fn n_pmt2(&self) -> usize {
        self.pmt_dcl[0].len()
    }
}

/// Moves the value layer of a stored ciphertext from the owner's value key
/// to the group's, without learning either. DC codes that get shorter keep
/// their dropped high bits in the carry sidecar so decryption still works.
pub fn cs_reencrypt_for_group(enc_img: &EncryptedImage, inc: &IncValKey, scope: &str) -> Result<EncryptedImage> {
    if (enc_img.n_pmt1, enc_img.n_pmt2) != (inc.n_pmt1(), inc.n_pmt2()) {
        return Err(Error::contract("increment key table counts differ from the ciphertext"));
    }
    let mut img = enc_img.coefficients()?;
    let inv_v: [Vec<Permutation>; 3] = [0, 1, 2].map(|c| inc.pmtv[c].iter().map(Permutation::inverse).collect());
    let inv_l: [Vec<Permutation>; 3] = [0, 1, 2].map(|c| inc.pmt_dcl[c].iter().map(Permutation::inverse).collect());
    let mut carry = enc_img.dc_carry.clone().unwrap_or_else(|| DcCarry(img.block_counts().map(|n| vec![0; n])));
    for c in 0..3 {
        if carry.0[c].len() != img.components[c].blocks.len() {
            return Err(Error::contract("DC carry does not match the ciphertext"));
        }
        for (i, b) in img.components[c].blocks.iter_mut().enumerate() {
            let table = &inv_v[c][i % inc.n_pmt1()];
            for p in b.pairs.iter_mut() {
                if let Some(k) = alphabet_index(p.v) {
                    p.v = ALPHABET[table.at(k)];
                }
            }
            let l_old = b.dc.group;
            if (l_old as usize) < DC_LEN_DOMAIN {
                let l_new = inv_l[c][i % inc.n_pmt2()].at(l_old as usize) as u8;
                let full = (b.dc.bits as u64) | ((carry.0[c][i] as u64) << l_old);
                b.dc = VliCode::new(l_new, (full & ((1u64 << l_new) - 1)) as u16)?;
                carry.0[c][i] = (full >> l_new) as u16;
            }
        }
    }
    let any_carry = carry.0.iter().flatten().any(|&x| x != 0);
    Ok(EncryptedImage {
        value_scope: scope.to_string(),
        jpeg: encode_jpeg(&img)?,
        dc_carry: any_carry.then_some(carry),
        ..enc_img.clone()
    })
}

/// Symmetric key of a group envelope.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapKey(#[serde(with = "hex::serde")] pub [u8; 32]);

impl WrapKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        WrapKey(k)
    }
}

impl std::fmt::Debug for WrapKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("WrapKey(..)")
    }
}

/// AES-256-GCM over the serialized key; output is `nonce ‖ ciphertext ‖ tag`.
pub fn wrap_for_group<R: RngCore + CryptoRng>(enc: &EncPosKey, k: &WrapKey, rng: &mut R) -> Result<Vec<u8>> {
    let cipher = Aes256Gcm::new_from_slice(&k.0).expect("32-byte key");
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let body = serde_json::to_vec(enc)?;
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), body.as_slice())
        .map_err(|_| Error::Encoding("envelope encryption failed".into()))?;
    let mut out = nonce.to_vec();
    out.extend_from_slice(&ct);
    Ok(out)
}

pub fn unwrap_for_group(blob: &[u8], k: &WrapKey) -> Result<EncPosKey> {
    if blob.len() < 12 + 16 {
        return Err(Error::Tamper("envelope too short".into()));
    }
    let cipher = Aes256Gcm::new_from_slice(&k.0).expect("32-byte key");
    let body = cipher
        .decrypt(Nonce::from_slice(&blob[..12]), &blob[12..])
        .map_err(|_| Error::Tamper("envelope authentication failed".into()))?;
    Ok(serde_json::from_slice(&body)?)
}
