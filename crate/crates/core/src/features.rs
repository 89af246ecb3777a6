//! Retrieval features computed directly on (encrypted) coefficients.
//!
//! Generic over the float type; the crate root re-exports `f64` aliases.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Block, CoeffImage};
use crate::error::{Error, Result};
use crate::Component;

/// Scalar used by feature vectors.
pub trait Scalar: Float + Sum + Debug + Default + Send + Sync + 'static {}

impl<T: Float + Sum + Debug + Default + Send + Sync + 'static> Scalar for T {}

pub const DC_BINS: usize = 10;
pub const DC_DIM: usize = 3 * DC_BINS;
pub const HIST_S: usize = 3;
pub const HIST_V: usize = 23;
pub const HIST_R: usize = 14;
pub const LOCAL_DIM: usize = HIST_S + HIST_V + HIST_R;

fn lit<T: Scalar>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

/// Per component, how many blocks have a DC code of each length `0..=9`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcFeature {
    pub counts: Vec<u32>,
    pub block_counts: [usize; 3],
}

pub fn extract_dc_feature(img: &CoeffImage) -> DcFeature {
    let mut counts = vec![0u32; DC_DIM];
    for c in Component::ALL {
        for b in &img.component(c).blocks {
            if (b.dc.group as usize) < DC_BINS {
                counts[c.index() * DC_BINS + b.dc.group as usize] += 1;
            }
        }
    }
    DcFeature { counts, block_counts: img.block_counts() }
}

impl DcFeature {
    /// Counts divided by the component's block count.
    pub fn normalized<T: Scalar>(&self) -> Vec<T> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let total = self.block_counts[i / DC_BINS].max(1);
                lit::<T>(n as f64) / lit(total as f64)
            })
            .collect()
    }
}

/// `Hist_s ‖ Hist_v ‖ Hist_r` of one block (40 values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAcHist<T>(pub Vec<T>);

impl<T: Scalar> LocalAcHist<T> {
    pub fn hist_s(&self) -> &[T] {
        &self.0[..HIST_S]
    }

    pub fn hist_v(&self) -> &[T] {
        &self.0[HIST_S..HIST_S + HIST_V]
    }

    pub fn hist_r(&self) -> &[T] {
        &self.0[HIST_S + HIST_V..]
    }
}

/// Bin of `v` in `Hist_v`: `v + 10` for `-10..=10`, then `v > 10`, `v < -10`.
pub fn hist_v_bin(v: i16) -> usize {
    match v {
        -10..=10 => (v + 10) as usize,
        11.. => 21,
        _ => 22,
    }
}

pub fn local_hist<T: Scalar>(block: &Block) -> LocalAcHist<T> {
    let mut out = vec![T::zero(); LOCAL_DIM];
    let n = block.pairs.len();
    if n > 0 {
        // Integer moments keep the result independent of pair order.
        let s1: u64 = block.pairs.iter().map(|p| p.r as u64).sum();
        let s2: u64 = block.pairs.iter().map(|p| (p.r as u64).pow(2)).sum();
        let nf = lit::<T>(n as f64);
        out[0] = nf;
        out[1] = lit::<T>(s1 as f64) / nf;
        out[2] = (lit::<T>((n as u64 * s2 - s1 * s1) as f64) / (nf * nf)).sqrt();
    }
    for p in &block.pairs {
        out[HIST_S + hist_v_bin(p.v)] = out[HIST_S + hist_v_bin(p.v)] + T::one();
    }
    let mut rs: Vec<u8> = block.pairs.iter().map(|p| p.r).collect();
    rs.sort_unstable_by(|a, b| b.cmp(a));
    for i in 0..HIST_R {
        out[HIST_S + HIST_V + i] = rs.get(i).map_or(-T::one(), |&r| lit(r as f64));
    }
    LocalAcHist(out)
}

/// One local histogram per block, per component, in block order.
pub fn extract_local_hists<T: Scalar>(img: &CoeffImage) -> [Vec<LocalAcHist<T>>; 3] {
    [0, 1, 2].map(|c| img.components[c].blocks.iter().map(local_hist).collect())
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> usize {
    let mut best = (0, T::infinity());
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans<T> {
    pub centroids: Vec<Vec<T>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after each iteration.
    pub objective: Vec<T>,
}

fn plus_plus<T: Scalar>(points: &[&[T]], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<T>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0]).to_f64().unwrap()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]).to_f64().unwrap());
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding from `seed`.
pub fn kmeans<T: Scalar>(points: &[&[T]], k: usize, seed: u64) -> Result<KMeans<T>> {
    if k == 0 || points.len() < k {
        return Err(Error::contract(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::contract("points of differing dimension"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective: Vec<T> = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let a = nearest(p, &centroids);
            changed |= a != assignment[i];
            assignment[i] = a;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sizes[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
                *s = *s + x;
            }
        }
        for j in 0..k {
            if sizes[j] > 0 {
                let n = lit::<T>(sizes[j] as f64);
                centroids[j] = sums[j].iter().map(|&s| s / n).collect();
            }
        }
        // Empty clusters restart at the point worst served by its centroid.
        for j in 0..k {
            if sizes[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(points[a], &centroids[assignment[a]]);
                        let db = sq_dist(points[b], &centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[j] = points[far].to_vec();
            }
        }
        let j: T = points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
        let prev = objective.last().copied();
        objective.push(j);
        if !changed {
            break;
        }
        if let Some(prev) = prev {
            if prev - j <= lit::<T>(KMEANS_TOL) * prev {
                break;
            }
        }
    }
    Ok(KMeans { centroids, assignment, objective })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentVocab<T> {
    pub centroids: Vec<Vec<T>>,
    pub idf: Vec<T>,
    pub objective: Vec<T>,
}

/// Visual words of one scope (owner, group, or a global-`k_g` vocabulary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary<T> {
    pub scope: String,
    pub k: usize,
    pub components: Vec<ComponentVocab<T>>,
}

/// Local histograms of one image.
pub type ImageHists<T> = [Vec<LocalAcHist<T>>; 3];

/// Smoothed inverse document frequency, always positive.
pub fn idf<T: Scalar>(n_docs: usize, df: usize) -> T {
    lit::<T>(((1 + n_docs) as f64 / (1 + df) as f64).ln() + 1.0)
}

/// Clusters each component's local histograms independently into `k` words.
pub fn build_vocabulary<T: Scalar>(images: &[ImageHists<T>], k: usize, seed: u64, scope: &str) -> Result<Vocabulary<T>> {
    let mut components = Vec::with_capacity(3);
    for c in 0..3 {
        let points: Vec<&[T]> = images.iter().flat_map(|h| h[c].iter().map(|x| x.0.as_slice())).collect();
        let km = kmeans(&points, k, seed.wrapping_add(c as u64))?;
        let mut df = vec![0usize; k];
        let mut offset = 0;
        for h in images {
            let mut seen = vec![false; k];
            for &a in &km.assignment[offset..offset + h[c].len()] {
                seen[a] = true;
            }
            offset += h[c].len();
            seen.iter().enumerate().filter(|(_, &s)| s).for_each(|(w, _)| df[w] += 1);
        }
        let idf = df.iter().map(|&d| idf(images.len(), d)).collect();
        components.push(ComponentVocab { centroids: km.centroids, idf, objective: km.objective });
    }
    Ok(Vocabulary { scope: scope.to_string(), k, components })
}

/// Image descriptor: normalized DC feature plus one bag of words per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowFeature<T> {
    pub dc: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> BowFeature<T> {
    pub fn component(&self, c: Component) -> &[T] {
        match c {
            Component::Y => &self.y,
            Component::U => &self.u,
            Component::V => &self.v,
        }
    }
}

/// Term counts scaled by idf, then L1-normalized.
pub fn quantize<T: Scalar>(hists: &ImageHists<T>, vocab: &Vocabulary<T>) -> Result<[Vec<T>; 3]> {
    let mut out: [Vec<T>; 3] = Default::default();
    for c in 0..3 {
        let cv = &vocab.components[c];
        if cv.centroids.iter().any(|x| x.len() != LOCAL_DIM) {
            return Err(Error::contract("vocabulary dimension is not 40"));
        }
        let mut counts = vec![T::zero(); vocab.k];
        for h in &hists[c] {
            let w = nearest(&h.0, &cv.centroids);
            counts[w] = counts[w] + T::one();
        }
        let total = lit::<T>(hists[c].len().max(1) as f64);
        let mut f: Vec<T> = counts.iter().zip(&cv.idf).map(|(&n, &w)| n / total * w).collect();
        let norm: T = f.iter().map(|x| x.abs()).sum();
        if norm > T::zero() {
            f.iter_mut().for_each(|x| *x = *x / norm);
        }
        out[c] = f;
    }
    Ok(out)
}

pub fn bow_feature<T: Scalar>(img: &CoeffImage, vocab: &Vocabulary<T>) -> Result<BowFeature<T>> {
    let [y, u, v] = quantize(&extract_local_hists(img), vocab)?;
    Ok(BowFeature { dc: extract_dc_feature(img).normalized(), y, u, v })
}

/// Weights of the DC, Y, U and V terms of the distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub dc: T,
    pub y: T,
    pub u: T,
    pub v: T,
}

impl<T: Scalar> Default for Weights<T> {
    fn default() -> Self {
        Weights { dc: lit(0.1), y: lit(0.5), u: lit(0.2), v: lit(0.2) }
    }
}

fn l1<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("feature dimensions {} and {} differ", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum())
}

/// Weighted sum of per-part Manhattan distances.
pub fn distance<T: Scalar>(a: &BowFeature<T>, b: &BowFeature<T>, w: &Weights<T>) -> Result<T> {
    Ok(w.dc * l1(&a.dc, &b.dc)? + w.y * l1(&a.y, &b.y)? + w.u * l1(&a.u, &b.u)? + w.v * l1(&a.v, &b.v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{RvPair, VliCode};

    fn block(pairs: &[(u8, i16)]) -> Block {
        Block { dc: VliCode::ZERO, pairs: pairs.iter().map(|&(r, v)| RvPair::new(r, v)).collect(), eob_present: true }
    }

    #[test]
    fn worked_example() {
        let h: LocalAcHist<f64> = local_hist(&block(&[(0, 3), (0, -8), (1, -1), (3, 3), (2, -4)]));
        assert_eq!(h.0.len(), 40);
        assert_eq!(h.hist_s()[0], 5.0);
        assert!((h.hist_s()[1] - 1.2).abs() < 1e-12);
        assert!((h.hist_s()[2] - 1.1662).abs() < 1e-4);
        let mut v = vec![0.0; 23];
        v[13] = 2.0;
        v[2] = 1.0;
        v[9] = 1.0;
        v[6] = 1.0;
        assert_eq!(h.hist_v(), v.as_slice());
        let mut r = vec![-1.0; 14];
        r[..5].copy_from_slice(&[3.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(h.hist_r(), r.as_slice());
    }

    #[test]
    fn empty_block_and_sentinels() {
        let h: LocalAcHist<f32> = local_hist(&block(&[]));
        assert_eq!(h.hist_s(), &[0.0, 0.0, 0.0]);
        assert!(h.hist_v().iter().all(|&x| x == 0.0));
        assert!(h.hist_r().iter().all(|&x| x == -1.0));
        let h: LocalAcHist<f64> = local_hist(&block(&[(15, 0), (0, 12), (0, -300)]));
        assert_eq!(h.hist_v()[10], 1.0);
        assert_eq!(h.hist_v()[21], 1.0);
        assert_eq!(h.hist_v()[22], 1.0);
        assert_eq!(h.hist_r()[0], 15.0);
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let one = kmeans(&refs, 1, 3).unwrap();
        assert_eq!(one.centroids, vec![vec![2.0, 2.0]]);
        let all = kmeans(&refs, 3, 3).unwrap();
        let mut got = all.centroids.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, pts);
        assert!(kmeans(&refs, 4, 3).is_err());
    }

    #[test]
    fn distance_basics() {
        let a = BowFeature { dc: vec![0.5; 30], y: vec![1.0, 0.0], u: vec![0.0], v: vec![0.0] };
        let b = BowFeature { dc: vec![0.0; 30], y: vec![0.0, 1.0], u: vec![1.0], v: vec![0.5] };
        let w = Weights::default();
        assert_eq!(distance(&a, &a, &w).unwrap(), 0.0);
        let d = distance(&a, &b, &w).unwrap();
        assert!((d - (0.1 * 15.0 + 0.5 * 2.0 + 0.2 + 0.1)).abs() < 1e-12);
        let c = BowFeature { y: vec![1.0], ..a.clone() };
        assert!(matches!(distance(&a, &c, &w), Err(Error::Contract(_))));
    }
}
