//! Vector retrieval: exact search, HNSW, IVF-Flat, latency monitoring and
//! an optional result cache.
//!
//! Distances are Euclidean. Results are ordered by ascending distance with
//! ties broken by ascending row, and rows are kept sorted by external id so
//! the row order is the id order.

mod cache;
mod hnsw;
mod ivf;
mod latency;
mod snapshot;

use std::cmp::Ordering;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use cache::ResultCache;
pub use hnsw::{HnswAudit, HnswIndex, HnswParams};
pub use ivf::{IvfIndex, IvfParams};
pub use latency::{LatencyMonitor, LatencyReport};
pub use snapshot::{MAGIC, SNAPSHOT_VERSION};

/// Ad vectors with their external ids, rows sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl VectorStore {
    /// Rows are reordered by id. Ids must be unique and values finite.
    pub fn new(dim: usize, rows: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateEntity(w[0].0.clone()));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput(format!("vector `{id}`")));
            }
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Ok(VectorStore { ids, dim, data })
    }

    /// Rows named by their zero-padded position.
    pub fn from_rows(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        let n = data.len() / dim;
        let width = n.to_string().len();
        let rows = data
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, c)| (format!("{i:0width$}"), c.to_vec()))
            .collect();
        VectorStore::new(dim, rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: u32) -> &str {
        &self.ids[row as usize]
    }

    pub fn row_of(&self, id: &str) -> Option<u32> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).ok().map(|i| i as u32)
    }

    pub fn vector(&self, row: u32) -> &[f32] {
        let r = row as usize;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }
}

/// Squared Euclidean distance.
pub fn sq_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut s: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += (x - y) * (x - y);
    }
    s
}

/// A candidate under the result order: squared distance, then row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cand {
    pub d2: f32,
    pub row: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: u32,
    pub distance: f64,
}

/// Ranked hits, ascending by distance then row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
}

impl QueryResult {
    pub(crate) fn from_sorted(cands: impl IntoIterator<Item = Cand>) -> Self {
        QueryResult {
            hits: cands
                .into_iter()
                .map(|c| Hit {
                    row: c.row,
                    distance: f64::from(c.d2).sqrt(),
                })
                .collect(),
        }
    }

    pub fn rows(&self) -> Vec<u32> {
        self.hits.iter().map(|h| h.row).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Distances non-decreasing, equal distances in ascending row order.
    pub fn is_well_ordered(&self) -> bool {
        self.hits
            .windows(2)
            .all(|w| w[0].distance < w[1].distance || (w[0].distance == w[1].distance && w[0].row < w[1].row))
    }
}

/// Keeps the `k` smallest candidates and returns them sorted.
pub(crate) fn top_k(mut cands: Vec<Cand>, k: usize) -> Vec<Cand> {
    if cands.len() > k {
        cands.select_nth_unstable(k);
        cands.truncate(k);
    }
    cands.sort_unstable();
    cands
}

pub fn exact_search(store: &VectorStore, query: &[f32], k: usize) -> Result<QueryResult> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    store.check_query(query)?;
    if k == 0 {
        return Ok(QueryResult::default());
    }
    let cands = (0..store.len() as u32)
        .map(|row| Cand {
            d2: sq_l2(query, store.vector(row)),
            row,
        })
        .collect();
    Ok(QueryResult::from_sorted(top_k(cands, k)))
}

/// Fraction of `truth` rows found in `found`.
pub fn recall(found: &QueryResult, truth: &QueryResult) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let t: std::collections::HashSet<u32> = truth.hits.iter().map(|h| h.row).collect();
    found.hits.iter().filter(|h| t.contains(&h.row)).count() as f64 / t.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexKind {
    Exact,
    Hnsw,
    Ivf,
}

impl IndexKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexKind::Exact => "exact",
            IndexKind::Hnsw => "hnsw",
            IndexKind::Ivf => "ivf",
        }
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexKind::Exact),
            "hnsw" => Ok(IndexKind::Hnsw),
            "ivf" => Ok(IndexKind::Ivf),
            other => Err(Error::InvalidConfig(format!("unknown index kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Exact,
    Hnsw(HnswIndex),
    Ivf(IvfIndex),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub ef_search: usize,
    pub nprobe: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k: 10,
            ef_search: 64,
            nprobe: 8,
        }
    }
}

/// A store together with one search structure over it.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub store: VectorStore,
    pub structure: Structure,
}

impl VectorIndex {
    pub fn exact(store: VectorStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyStore);
        }
        Ok(VectorIndex {
            store,
            structure: Structure::Exact,
        })
    }

    pub fn hnsw(store: VectorStore, params: HnswParams) -> Result<Self> {
        let h = HnswIndex::build(&store, params)?;
        Ok(VectorIndex {
            store,
            structure: Structure::Hnsw(h),
        })
    }

    pub fn ivf(store: VectorStore, params: IvfParams) -> Result<Self> {
        let i = IvfIndex::build(&store, params)?;
        Ok(VectorIndex {
            store,
            structure: Structure::Ivf(i),
        })
    }

    pub fn kind(&self) -> IndexKind {
        match self.structure {
            Structure::Exact => IndexKind::Exact,
            Structure::Hnsw(_) => IndexKind::Hnsw,
            Structure::Ivf(_) => IndexKind::Ivf,
        }
    }

    pub fn search(&self, query: &[f32], p: &SearchParams) -> Result<QueryResult> {
        match &self.structure {
            Structure::Exact => exact_search(&self.store, query, p.k),
            Structure::Hnsw(h) => h.search(&self.store, query, p.k, p.ef_search.max(p.k)),
            Structure::Ivf(i) => i.search(&self.store, query, p.k, p.nprobe.min(i.nlist())),
        }
    }
}
