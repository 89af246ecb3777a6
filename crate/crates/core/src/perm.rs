//! Keyed permutations and keystreams, and the permutation cipher.
//!
//! Permutations are one-based: a key `k` of length `n` lists each of
//! `1..=n` once. Encryption gathers, `c[i] = d[k[i]]`; decryption scatters,
//! `d[k[i]] = c[i]`. With `∘` as composition of index maps,
//! `enc_perm(a, b) = a ∘ b` and `dec_perm(a, b) = a ∘ b⁻¹`, which is what
//! makes key conversion work:
//! `enc_perm(dec_perm(k2, k1), enc_perm(k1, k)) = enc_perm(k2, k)`.

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bits::BitString;
use crate::error::{Error, Result};

const PRF_CONTEXT: &[u8] = b"coeffcrypt.prf.v1";

/// The empty permutation is the default.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Permutation(Vec<u32>);

impl TryFrom<Vec<u32>> for Permutation {
    type Error = Error;

    fn try_from(mapping: Vec<u32>) -> Result<Self> {
        Permutation::new(mapping)
    }
}

impl From<Permutation> for Vec<u32> {
    fn from(p: Permutation) -> Vec<u32> {
        p.0
    }
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((1..=n as u32).collect())
    }

    /// Validates a one-based mapping.
    pub fn new(mapping: Vec<u32>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &k in &mapping {
            let i = k as usize;
            if i == 0 || i > n || seen[i - 1] {
                return Err(Error::contract(format!("{mapping:?} is not a permutation of 1..={n}")));
            }
            seen[i - 1] = true;
        }
        Ok(Permutation(mapping))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &k)| k as usize == i + 1)
    }

    /// Zero-based image of zero-based position `i`.
    pub fn at(&self, i: usize) -> usize {
        self.0[i] as usize - 1
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0u32; self.0.len()];
        for (i, &k) in self.0.iter().enumerate() {
            inv[k as usize - 1] = i as u32 + 1;
        }
        Permutation(inv)
    }

    /// `enc_perm(self, key)`, staying inside the permutation group.
    pub fn enc(&self, key: &Permutation) -> Result<Permutation> {
        enc_perm(&self.0, key).map(Permutation)
    }

    /// `dec_perm(self, key)`, staying inside the permutation group.
    pub fn dec(&self, key: &Permutation) -> Result<Permutation> {
        dec_perm(&self.0, key).map(Permutation)
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Perm{:?}", self.0)
    }
}

fn check_len(n: usize, key: &Permutation) -> Result<()> {
    if n != key.len() {
        return Err(Error::contract(format!("data of length {n} with key of length {}", key.len())));
    }
    Ok(())
}

/// `c[i] = d[k[i]]`.
pub fn enc_perm<T: Clone>(data: &[T], key: &Permutation) -> Result<Vec<T>> {
    check_len(data.len(), key)?;
    Ok(key.0.iter().map(|&k| data[k as usize - 1].clone()).collect())
}

/// `d[k[i]] = c[i]`.
pub fn dec_perm<T: Clone>(data: &[T], key: &Permutation) -> Result<Vec<T>> {
    check_len(data.len(), key)?;
    let mut out: Vec<Option<T>> = vec![None; data.len()];
    for (c, &k) in data.iter().zip(&key.0) {
        out[k as usize - 1] = Some(c.clone());
    }
    Ok(out.into_iter().map(|x| x.expect("bijective key")).collect())
}

/// A 32-byte secret together with the role it plays (e.g. `key_blo/Y`).
#[derive(Clone, PartialEq, Eq)]
pub struct SeedKey {
    secret: [u8; 32],
    role: String,
}

impl SeedKey {
    pub fn new(secret: [u8; 32], role: impl Into<String>) -> Self {
        SeedKey { secret, role: role.into() }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, role: impl Into<String>) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        SeedKey::new(secret, role)
    }

    pub fn role(&self) -> &str {
        &self.role
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }

    fn xof(&self, purpose: &[u8], tag: &DomainTag) -> blake3::OutputReader {
        let mut h = blake3::Hasher::new_keyed(&self.secret);
        let mut header = DomainTag::new().bytes(PRF_CONTEXT).bytes(purpose).str(&self.role);
        header.tokens.extend(tag.tokens.iter().cloned());
        h.update(&header.to_bytes());
        h.finalize_xof()
    }
}

impl fmt::Debug for SeedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeedKey({}, ..)", self.role)
    }
}

#[derive(Serialize, Deserialize)]
struct SeedKeyRepr {
    role: String,
    secret: String,
}

impl Serialize for SeedKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SeedKeyRepr { role: self.role.clone(), secret: hex::encode(self.secret) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SeedKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SeedKeyRepr::deserialize(d)?;
        let bytes = hex::decode(&repr.secret).map_err(serde::de::Error::custom)?;
        let secret: [u8; 32] =
            bytes.try_into().map_err(|_| serde::de::Error::custom("seed key must be 32 bytes"))?;
        Ok(SeedKey { secret, role: repr.role })
    }
}

/// Ordered list of tokens mixed into a derivation; serialized injectively
/// as a token count followed by length-prefixed tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainTag {
    tokens: Vec<Vec<u8>>,
}

impl DomainTag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, token: &[u8]) -> Self {
        self.tokens.push(token.to_vec());
        self
    }

    pub fn str(self, token: &str) -> Self {
        self.bytes(token.as_bytes())
    }

    pub fn num(self, token: u64) -> Self {
        self.bytes(&token.to_be_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.tokens.len() as u32).to_be_bytes().to_vec();
        for t in &self.tokens {
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }
}

/// Uniform draw from `0..bound` by rejection sampling.
fn uniform_below(reader: &mut blake3::OutputReader, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
    loop {
        let mut buf = [0u8; 8];
        reader.fill(&mut buf);
        let x = u64::from_le_bytes(buf);
        if x <= zone {
            return x % bound;
        }
    }
}

/// Fisher-Yates shuffle of `1..=n` driven by the keyed PRF.
pub fn rand_perm(key: &SeedKey, n: usize, tag: &DomainTag) -> Result<Permutation> {
    if n == 0 {
        return Err(Error::Range("permutation length must be at least 1".into()));
    }
    let mut reader = key.xof(b"perm", &tag.clone().num(n as u64));
    let mut out: Vec<u32> = (1..=n as u32).collect();
    for i in (1..n).rev() {
        let j = uniform_below(&mut reader, i as u64 + 1) as usize;
        out.swap(i, j);
    }
    Ok(Permutation(out))
}

/// Keystream of exactly `len_bits` bits.
pub fn stm_ciph(key: &SeedKey, len_bits: usize, tag: &DomainTag) -> Result<BitString> {
    if len_bits == 0 {
        return Err(Error::Range("keystream length must be at least 1".into()));
    }
    let mut reader = key.xof(b"stream", tag);
    let mut buf = vec![0u8; len_bits.div_ceil(8)];
    reader.fill(&mut buf);
    BitString::from_bytes(&buf, len_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(b: u8) -> SeedKey {
        SeedKey::new([b; 32], "test")
    }

    #[test]
    fn cipher_examples() {
        let k = Permutation::new(vec![3, 1, 2]).unwrap();
        assert_eq!(enc_perm(&[10, 20, 30], &k).unwrap(), vec![30, 10, 20]);
        assert_eq!(dec_perm(&[30, 10, 20], &k).unwrap(), vec![10, 20, 30]);
        let id = Permutation::identity(3);
        assert_eq!(enc_perm(&[1, 2, 3], &id).unwrap(), vec![1, 2, 3]);
        assert_eq!(dec_perm(&[1, 2, 3], &id).unwrap(), vec![1, 2, 3]);
        assert!(matches!(enc_perm(&[1, 2], &k), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_mappings_are_rejected() {
        assert!(Permutation::new(vec![1, 1]).is_err());
        assert!(Permutation::new(vec![0, 1]).is_err());
        assert!(Permutation::new(vec![2, 3]).is_err());
        assert!(Permutation::new(vec![]).is_ok());
    }

    #[test]
    fn rand_perm_basics() {
        let t = DomainTag::new().str("iid-1");
        assert_eq!(rand_perm(&key(1), 1, &t).unwrap(), Permutation::identity(1));
        assert_eq!(rand_perm(&key(1), 50, &t).unwrap(), rand_perm(&key(1), 50, &t).unwrap());
        assert_ne!(rand_perm(&key(1), 50, &t).unwrap(), rand_perm(&key(2), 50, &t).unwrap());
        assert_ne!(
            rand_perm(&key(1), 50, &t).unwrap(),
            rand_perm(&key(1), 50, &DomainTag::new().str("iid-2")).unwrap()
        );
        assert!(matches!(rand_perm(&key(1), 0, &t), Err(Error::Range(_))));
        assert!(Permutation::new(rand_perm(&key(9), 1000, &t).unwrap().0).is_ok());
    }

    #[test]
    fn role_participates_in_derivation() {
        let t = DomainTag::new();
        let a = SeedKey::new([7; 32], "key_blo/Y");
        let b = SeedKey::new([7; 32], "key_blo/U");
        assert_ne!(rand_perm(&a, 30, &t).unwrap(), rand_perm(&b, 30, &t).unwrap());
    }

    #[test]
    fn domain_tags_are_injective() {
        let a = DomainTag::new().str("ab").str("c");
        let b = DomainTag::new().str("a").str("bc");
        assert_ne!(a.to_bytes(), b.to_bytes());
        assert_ne!(DomainTag::new().to_bytes(), DomainTag::new().str("").to_bytes());
    }

    #[test]
    fn rand_perm_uniform_on_s4() {
        // Pearson chi-square over the 24 permutations of 4 points, 23 dof.
        // The 0.999 quantile of chi2(23) is 49.73.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000;
        for _ in 0..trials {
            let k = SeedKey::generate(&mut rng, "chi");
            *counts.entry(rand_perm(&k, 4, &DomainTag::new()).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        let chi2: f64 = counts.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 49.73, "chi2 = {chi2}");
        let sigma = (expected * (1.0 - 1.0 / 24.0)).sqrt();
        for &o in counts.values() {
            assert!((o as f64 - expected).abs() < 3.0 * sigma + 1.0, "count {o} vs {expected}");
        }
    }

    #[test]
    fn keystream_balance_and_independence() {
        let bits = stm_ciph(&key(3), 1_000_000, &DomainTag::new().str("balance")).unwrap();
        assert_eq!(bits.len(), 1_000_000);
        let ones = bits.count_ones() as f64;
        let sigma = (1_000_000f64 * 0.25).sqrt();
        assert!((ones - 500_000.0).abs() < 3.0 * sigma, "ones = {ones}");

        let mut seen = std::collections::HashSet::new();
        for j in 0..10_000u64 {
            let s = stm_ciph(&key(3), 64, &DomainTag::new().str("iid").num(j)).unwrap();
            assert!(seen.insert(s.to_u64()), "collision at tag {j}");
        }
        let t = DomainTag::new().num(5);
        assert_eq!(stm_ciph(&key(4), 77, &t).unwrap(), stm_ciph(&key(4), 77, &t).unwrap());
        assert!(stm_ciph(&key(4), 0, &t).is_err());
    }

    #[test]
    fn seed_key_serde_is_hex() {
        let k = SeedKey::new([0xAB; 32], "key_v/Y");
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains(&"ab".repeat(32)));
        let back: SeedKey = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
    }

    fn perm_strategy(n: usize) -> impl Strategy<Value = Permutation> {
        Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle().prop_map(Permutation)
    }

    proptest! {
        #[test]
        fn dec_inverts_enc(n in 1usize..200, seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let k = rand_perm(&SeedKey::generate(&mut rng, "p"), n, &DomainTag::new()).unwrap();
            let data: Vec<u64> = (0..n as u64).map(|i| i * 7 + seed % 13).collect();
            prop_assert_eq!(dec_perm(&enc_perm(&data, &k).unwrap(), &k).unwrap(), data.clone());
            prop_assert_eq!(enc_perm(&dec_perm(&data, &k).unwrap(), &k).unwrap(), data);
        }

        #[test]
        fn inverse_matches_dec_of_identity(k in (1usize..64).prop_flat_map(perm_strategy)) {
            let id = Permutation::identity(k.len());
            prop_assert_eq!(id.dec(&k).unwrap(), k.inverse());
        }
    }
}
