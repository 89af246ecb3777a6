use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{SimConfig, Simulator, Source};
use crate::codec::decode_jpeg;
use crate::error::{Error, Result};
use crate::index::ResultRow;

/// One image of a labeled corpus.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub category: String,
    pub iid: String,
    pub jpeg: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub rows: Vec<ResultRow>,
    /// Precision at m per query, in query order.
    pub per_query: Vec<(String, f64)>,
    pub mean_precision: f64,
    /// Whether every query kept one CS–KMC and one CS–user round.
    pub constant_rounds: bool,
}

/// Owner index of each image: a seeded shuffle dealt round-robin, so every
/// owner gets an equal share (±1) and the split is uniform over such deals.
pub fn partition(n_images: usize, n_sources: usize, seed: u64) -> Result<Vec<usize>> {
    if n_sources == 0 || n_sources > n_images {
        return Err(Error::Range(format!("cannot split {n_images} images over {n_sources} sources")));
    }
    let mut order: Vec<usize> = (0..n_images).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut owner = vec![0; n_images];
    for (slot, &i) in order.iter().enumerate() {
        owner[i] = slot % n_sources;
    }
    Ok(owner)
}

/// Splits the corpus over `n_sources` owners, authorizes one user at all of
/// them, queries with every image (or the first `queries` of a seeded
/// order) across all sources, and scores each top-`m` by category.
pub fn eval_precision(
    corpus: &[LabeledImage],
    n_sources: usize,
    m: usize,
    config: SimConfig,
    seed: u64,
    queries: Option<usize>,
) -> Result<EvalRun> {
    if m == 0 {
        return Err(Error::Range("m must be at least 1".into()));
    }
    let owner_of = partition(corpus.len(), n_sources, seed)?;
    let names: Vec<String> = (0..n_sources).map(|i| format!("o{i:03}")).collect();
    let mut sim = Simulator::new(config, seed);
    sim.add_user("evaluator")?;
    for (o, name) in names.iter().enumerate() {
        sim.add_owner(name)?;
        let batch = corpus
            .iter()
            .zip(&owner_of)
            .filter(|(_, &w)| w == o)
            .map(|(img, _)| (img.iid.clone(), img.jpeg.clone()))
            .collect();
        sim.outsource(name, batch)?;
        sim.authorize(name, "evaluator")?;
    }
    let sources: Vec<Source> = names.iter().map(|n| Source::Owner(n.clone())).collect();
    let category = |iid: &str| corpus.iter().find(|x| x.iid == iid).map(|x| x.category.as_str());

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(q) = queries {
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15));
        order.truncate(q);
    }
    let (mut rows, mut per_query, mut constant_rounds) = (Vec::new(), Vec::new(), true);
    for i in order {
        let q = &corpus[i];
        let out = sim.query("evaluator", &decode_jpeg(&q.jpeg)?, &sources, m)?;
        constant_rounds &= (out.rounds.cs_kmc, out.rounds.cs_user, out.rounds.kmc_user) == (1, 1, 0);
        let mut good = 0;
        for h in &out.hits {
            let correct = category(&h.iid) == Some(q.category.as_str());
            good += correct as usize;
            rows.push(ResultRow { query: q.iid.clone(), rank: h.rank, iid: h.iid.clone(), distance: h.distance, correct });
        }
        per_query.push((q.iid.clone(), good as f64 / m as f64));
    }
    let mean_precision = per_query.iter().map(|(_, p)| p).sum::<f64>() / per_query.len().max(1) as f64;
    Ok(EvalRun { rows, per_query, mean_precision, constant_rounds })
}
