use serde::{Deserialize, Serialize};

use super::{alphabet_index, PosKey, ALPHABET, DC_LEN_DOMAIN};
use crate::codec::CoeffImage;

/// The feature-security figure quoted by the scheme's authors for five tables
/// of each kind. It is reported next to the recomputed value, not derived.
pub const PAPER_FEATURE_BITS: f64 = 642.0;

pub fn log2_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).log2()).sum()
}

/// Bit-strength accounting of one encrypted image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityStrength {
    /// `3 · N_pmt1 · log2(20!)`
    pub value_tables: f64,
    /// `Σ_c log2(blknum_c!)`
    pub block_perm: f64,
    /// `3 · Σ_c Σ_j log2(blksize_j!)`, with the factor 3 kept as written.
    pub intra_perm: f64,
    /// `3 · N_pmt2 · log2(10!)`
    pub length_tables: f64,
    /// `Σ_c Σ_j n_j`, the DC mask lengths.
    pub dc_mask: f64,
    pub total: f64,
    /// `value_tables + length_tables`, the recomputed feature strength.
    pub feature_bits: f64,
    pub paper_feature_bits: f64,
}

pub fn security_strength(poskey: &PosKey, n_pmt1: usize, n_pmt2: usize) -> SecurityStrength {
    let value_tables = 3.0 * n_pmt1 as f64 * log2_factorial(ALPHABET.len());
    let length_tables = 3.0 * n_pmt2 as f64 * log2_factorial(DC_LEN_DOMAIN);
    let block_perm = poskey.pmtb.iter().map(|p| log2_factorial(p.len())).sum();
    let intra_perm =
        3.0 * poskey.pmtp.iter().flatten().map(|p| log2_factorial(p.len())).sum::<f64>();
    let dc_mask = poskey.bitkey.iter().flatten().map(|b| b.len() as f64).sum();
    SecurityStrength {
        value_tables,
        block_perm,
        intra_perm,
        length_tables,
        dc_mask,
        total: value_tables + block_perm + intra_perm + length_tables + dc_mask,
        feature_bits: value_tables + length_tables,
        paper_feature_bits: PAPER_FEATURE_BITS,
    }
}

/// Chi-square distance of the AC value histogram (substitution alphabet
/// only) from uniform. Lower means flatter.
pub fn alphabet_chi2(img: &CoeffImage) -> f64 {
    let mut h = [0u64; ALPHABET.len()];
    for comp in &img.components {
        for b in &comp.blocks {
            for p in &b.pairs {
                if let Some(k) = alphabet_index(p.v) {
                    h[k] += 1;
                }
            }
        }
    }
    let n: u64 = h.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let e = n as f64 / h.len() as f64;
    h.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}
