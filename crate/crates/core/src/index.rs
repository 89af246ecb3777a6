//! Linear index over per-scope image features, top-m search, and the
//! evaluation helpers (k_g suggestion, precision, CSV export).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{distance, BowFeature, Scalar, Weights, DC_DIM};

/// Which vocabulary a feature column was computed under.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Scope {
    /// Owner vocabulary with the owner's own k.
    Owner(String),
    /// Owner ciphertext clustered with the shared k_g.
    OwnerGlobal(String),
    /// Group vocabulary with the group's k.
    Group(String),
    /// Group ciphertext clustered with the shared k_g.
    GroupGlobal(String),
}

impl Scope {
    /// Principal (owner or group id) the scope belongs to.
    pub fn principal(&self) -> &str {
        match self {
            Scope::Owner(p) | Scope::OwnerGlobal(p) | Scope::Group(p) | Scope::GroupGlobal(p) => p,
        }
    }

    pub fn is_global(&self) -> bool {
        matches!(self, Scope::OwnerGlobal(_) | Scope::GroupGlobal(_))
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Owner(p) => write!(f, "owner/{p}"),
            Scope::OwnerGlobal(p) => write!(f, "owner-kg/{p}"),
            Scope::Group(p) => write!(f, "group/{p}"),
            Scope::GroupGlobal(p) => write!(f, "group-kg/{p}"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scope> {
        let (kind, p) = s.split_once('/').ok_or_else(|| Error::contract(format!("bad scope '{s}'")))?;
        let p = p.to_string();
        match kind {
            "owner" => Ok(Scope::Owner(p)),
            "owner-kg" => Ok(Scope::OwnerGlobal(p)),
            "group" => Ok(Scope::Group(p)),
            "group-kg" => Ok(Scope::GroupGlobal(p)),
            _ => Err(Error::contract(format!("bad scope '{s}'"))),
        }
    }
}

impl From<Scope> for String {
    fn from(s: Scope) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Scope {
    type Error = Error;

    fn try_from(s: String) -> Result<Scope> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow<T> {
    pub iid: String,
    pub owner: String,
    pub features: BTreeMap<Scope, BowFeature<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit<T> {
    pub iid: String,
    pub scope: Scope,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<T> {
    pub hits: Vec<Hit<T>>,
}

impl<T: Scalar> SearchResult<T> {
    pub fn iids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.iid.as_str()).collect()
    }
}

/// Table of image rows, each carrying one feature per scope it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearIndex<T> {
    scopes: BTreeMap<Scope, usize>,
    rows: BTreeMap<String, IndexRow<T>>,
}

impl<T: Scalar> Default for LinearIndex<T> {
    fn default() -> Self {
        LinearIndex { scopes: BTreeMap::new(), rows: BTreeMap::new() }
    }
}

fn check_dims<T: Scalar>(f: &BowFeature<T>, k: usize, scope: &Scope) -> Result<()> {
    if f.dc.len() != DC_DIM || f.y.len() != k || f.u.len() != k || f.v.len() != k {
        return Err(Error::contract(format!("feature dimensions do not match scope {scope} (k = {k})")));
    }
    Ok(())
}

fn sort_hits<T: Scalar>(hits: &mut [Hit<T>]) {
    hits.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap().then_with(|| a.iid.cmp(&b.iid)));
}

impl<T: Scalar> LinearIndex<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scopes(&self) -> &BTreeMap<Scope, usize> {
        &self.scopes
    }

    pub fn rows(&self) -> impl Iterator<Item = &IndexRow<T>> {
        self.rows.values()
    }

    pub fn row(&self, iid: &str) -> Option<&IndexRow<T>> {
        self.rows.get(iid)
    }

    /// Declares a scope and its vocabulary size; re-declaring with the same
    /// k is a no-op.
    pub fn add_scope(&mut self, scope: Scope, k: usize) -> Result<()> {
        match self.scopes.get(&scope) {
            Some(&old) if old != k => Err(Error::contract(format!("scope {scope} already has k = {old}"))),
            _ => {
                self.scopes.insert(scope, k);
                Ok(())
            }
        }
    }

    /// Drops a scope and every feature column under it.
    pub fn remove_scope(&mut self, scope: &Scope) {
        self.scopes.remove(scope);
        for row in self.rows.values_mut() {
            row.features.remove(scope);
        }
    }

    pub fn index_add(&mut self, row: IndexRow<T>) -> Result<()> {
        if self.rows.contains_key(&row.iid) {
            return Err(Error::Duplicate(format!("image {}", row.iid)));
        }
        for required in [Scope::Owner(row.owner.clone()), Scope::OwnerGlobal(row.owner.clone())] {
            if !row.features.contains_key(&required) {
                return Err(Error::contract(format!("row {} lacks scope {required}", row.iid)));
            }
        }
        for (scope, f) in &row.features {
            let k = *self.scopes.get(scope).ok_or_else(|| Error::contract(format!("unknown scope {scope}")))?;
            check_dims(f, k, scope)?;
        }
        self.rows.insert(row.iid.clone(), row);
        Ok(())
    }

    pub fn index_delete(&mut self, iid: &str) -> Result<IndexRow<T>> {
        self.rows.remove(iid).ok_or_else(|| Error::NotFound(format!("image {iid}")))
    }

    /// Sets (or replaces) one scope column of an existing row.
    pub fn set_feature(&mut self, iid: &str, scope: Scope, f: BowFeature<T>) -> Result<()> {
        let k = *self.scopes.get(&scope).ok_or_else(|| Error::contract(format!("unknown scope {scope}")))?;
        check_dims(&f, k, &scope)?;
        let row = self.rows.get_mut(iid).ok_or_else(|| Error::NotFound(format!("image {iid}")))?;
        row.features.insert(scope, f);
        Ok(())
    }

    fn scan(&self, query: &BowFeature<T>, scope: &Scope, w: &Weights<T>) -> Result<Vec<Hit<T>>> {
        let k = *self.scopes.get(scope).ok_or_else(|| Error::contract(format!("unknown scope {scope}")))?;
        check_dims(query, k, scope)?;
        let mut hits = Vec::new();
        for row in self.rows.values() {
            if let Some(f) = row.features.get(scope) {
                hits.push(Hit { iid: row.iid.clone(), scope: scope.clone(), distance: distance(query, f, w)? });
            }
        }
        Ok(hits)
    }

    /// Exact top-`m` under one scope, ordered by (distance, iid).
    pub fn search_single(&self, query: &BowFeature<T>, scope: &Scope, m: usize, w: &Weights<T>) -> Result<SearchResult<T>> {
        let mut hits = self.scan(query, scope, w)?;
        sort_hits(&mut hits);
        hits.truncate(m);
        Ok(SearchResult { hits })
    }

    /// One merged top-`m` over several sources, each queried with the
    /// trapdoor feature computed under that source's vocabulary. All scopes
    /// must share one k so that distances are comparable.
    pub fn search_multi(
        &self,
        queries: &[(Scope, BowFeature<T>)],
        authorized: &BTreeSet<Scope>,
        m: usize,
        w: &Weights<T>,
    ) -> Result<SearchResult<T>> {
        if queries.is_empty() {
            return Err(Error::contract("no sources to search"));
        }
        let mut k_seen = BTreeSet::new();
        for (scope, _) in queries {
            if !authorized.contains(scope) {
                return Err(Error::Authorization(format!("source {scope} is not authorized")));
            }
            k_seen.insert(*self.scopes.get(scope).ok_or_else(|| Error::contract(format!("unknown scope {scope}")))?);
        }
        if k_seen.len() > 1 {
            return Err(Error::contract(format!("sources use different vocabulary sizes {k_seen:?}")));
        }
        let mut hits = Vec::new();
        for (scope, q) in queries {
            hits.extend(self.scan(q, scope, w)?);
        }
        sort_hits(&mut hits);
        hits.truncate(m);
        Ok(SearchResult { hits })
    }
}

/// `mean(k_sug) · log2(1 + 1/ratio) · log2(1 + n_source)`, rounded.
pub fn k_suggest(k_sug: &[f64], ratio: f64, n_source: usize) -> Result<usize> {
    if k_sug.is_empty() {
        return Err(Error::contract("no suggested k values"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Range(format!("ratio {ratio} outside (0, 1]")));
    }
    if n_source == 0 {
        return Err(Error::Range("at least one source is needed".into()));
    }
    let mean = k_sug.iter().sum::<f64>() / k_sug.len() as f64;
    let k = mean * (1.0 + 1.0 / ratio).log2() * (1.0 + n_source as f64).log2();
    Ok((k.round() as usize).max(1))
}

/// Picks the candidate after which adding clusters stops paying off: the
/// first k whose relative objective gain over the previous candidate falls
/// below `min_gain`.
pub fn elbow_k(objectives: &[(usize, f64)], min_gain: f64) -> Option<usize> {
    let first = objectives.first()?;
    for w in objectives.windows(2) {
        let gain = (w[0].1 - w[1].1) / w[0].1.max(f64::MIN_POSITIVE);
        if gain < min_gain {
            return Some(w[0].0);
        }
    }
    Some(objectives.last().unwrap_or(first).0)
}

/// `P_m = m' / m`, where `m'` counts top-`m` hits of the query's category.
pub fn precision<T: Scalar>(
    result: &SearchResult<T>,
    truth: &BTreeMap<String, String>,
    query_category: &str,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Range("m must be at least 1".into()));
    }
    let good = result
        .hits
        .iter()
        .take(m)
        .filter(|h| truth.get(&h.iid).is_some_and(|c| c == query_category))
        .count();
    Ok(good as f64 / m as f64)
}

/// One line of an evaluation export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub query: String,
    pub rank: usize,
    pub iid: String,
    pub distance: f64,
    pub correct: bool,
}

pub fn result_rows<T: Scalar>(
    query: &str,
    result: &SearchResult<T>,
    truth: &BTreeMap<String, String>,
    query_category: Option<&str>,
) -> Vec<ResultRow> {
    result
        .hits
        .iter()
        .enumerate()
        .map(|(i, h)| ResultRow {
            query: query.to_string(),
            rank: i + 1,
            iid: h.iid.clone(),
            distance: h.distance.to_f64().unwrap_or(f64::NAN),
            correct: query_category.is_some_and(|q| truth.get(&h.iid).is_some_and(|c| c == q)),
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Encoding(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

const INDEX_MAGIC: &[u8; 4] = b"CCIX";
const INDEX_VERSION: u16 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_vec<T: Scalar>(out: &mut Vec<u8>, v: &[T]) {
    out.extend_from_slice(&(v.len() as u32).to_be_bytes());
    for x in v {
        out.extend_from_slice(&x.to_f64().unwrap_or(f64::NAN).to_be_bytes());
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::format(self.pos, "index file truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn str(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(at, "invalid UTF-8"))
    }

    fn vec<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u32()?;
        if n > (self.data.len() - self.pos) / 8 {
            return Err(Error::format(self.pos, "vector length exceeds file"));
        }
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::from(f64::from_be_bytes(c.try_into().unwrap())).unwrap_or_else(T::nan))
            .collect())
    }
}

impl<T: Scalar> LinearIndex<T> {
    /// Versioned binary form: header (magic, version, scopes with k), then
    /// rows in iid order. Reals are stored as big-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = INDEX_MAGIC.to_vec();
        out.extend_from_slice(&INDEX_VERSION.to_be_bytes());
        out.extend_from_slice(&(self.scopes.len() as u32).to_be_bytes());
        for (scope, &k) in &self.scopes {
            put_str(&mut out, &scope.to_string());
            out.extend_from_slice(&(k as u32).to_be_bytes());
        }
        out.extend_from_slice(&(self.rows.len() as u32).to_be_bytes());
        for row in self.rows.values() {
            put_str(&mut out, &row.iid);
            put_str(&mut out, &row.owner);
            out.extend_from_slice(&(row.features.len() as u32).to_be_bytes());
            for (scope, f) in &row.features {
                put_str(&mut out, &scope.to_string());
                for part in [&f.dc, &f.y, &f.u, &f.v] {
                    put_vec(&mut out, part);
                }
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut c = Cursor { data, pos: 0 };
        if c.take(4)? != INDEX_MAGIC {
            return Err(Error::format(0, "not an index file"));
        }
        let version = u16::from_be_bytes(c.take(2)?.try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(Error::format(4, format!("unknown index version {version}")));
        }
        let mut index = LinearIndex::new();
        for _ in 0..c.u32()? {
            let scope: Scope = c.str()?.parse()?;
            let k = c.u32()?;
            index.add_scope(scope, k)?;
        }
        for _ in 0..c.u32()? {
            let iid = c.str()?;
            let owner = c.str()?;
            let mut features = BTreeMap::new();
            for _ in 0..c.u32()? {
                let scope: Scope = c.str()?.parse()?;
                let f = BowFeature { dc: c.vec()?, y: c.vec()?, u: c.vec()?, v: c.vec()? };
                features.insert(scope, f);
            }
            index.index_add(IndexRow { iid, owner, features })?;
        }
        if c.pos != data.len() {
            return Err(Error::format(c.pos, "trailing bytes after index"));
        }
        Ok(index)
    }
}
