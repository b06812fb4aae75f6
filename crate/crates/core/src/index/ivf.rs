use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_l2, top_k, Cand, QueryResult, VectorStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvfParams {
    pub nlist: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        IvfParams {
            nlist: 64,
            kmeans_iters: 20,
            seed: 42,
        }
    }
}

/// Coarse k-means partition with one inverted list per centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub(crate) params: IvfParams,
    pub(crate) dim: usize,
    pub(crate) centroids: Vec<f32>,
    pub(crate) lists: Vec<Vec<u32>>,
}

fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    centroids
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, c)| Cand {
            d2: sq_l2(v, c),
            row: i as u32,
        })
        .min()
        .map_or(0, |c| c.row as usize)
}

/// k-means++ seeding: the first centre uniformly, each next one with
/// probability proportional to squared distance to the closest centre.
pub fn kmeans_pp<R: Rng + ?Sized>(store: &VectorStore, k: usize, rng: &mut R) -> Vec<f32> {
    let n = store.len();
    let dim = store.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n) as u32;
    centroids.extend_from_slice(store.vector(first));
    let mut d2: Vec<f64> = (0..n as u32).map(|r| f64::from(sq_l2(store.vector(r), store.vector(first)))).collect();
    for _ in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // all remaining points coincide with a centre
            Err(_) => rng.random_range(0..n),
        };
        let c = store.vector(pick as u32).to_vec();
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(f64::from(sq_l2(store.vector(r as u32), &c)));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

impl IvfIndex {
    pub fn build(store: &VectorStore, params: IvfParams) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyStore);
        }
        if params.nlist == 0 || params.nlist > store.len() {
            return Err(Error::InvalidConfig(format!(
                "nlist {} must be in 1..={}",
                params.nlist,
                store.len()
            )));
        }
        let dim = store.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut centroids = kmeans_pp(store, params.nlist, &mut rng);
        let mut assign = vec![0usize; store.len()];
        for iter in 0..=params.kmeans_iters {
            let mut changed = false;
            for (r, a) in assign.iter_mut().enumerate() {
                let c = nearest(&centroids, dim, store.vector(r as u32));
                changed |= c != *a;
                *a = c;
            }
            if iter == params.kmeans_iters || (iter > 0 && !changed) {
                break;
            }
            let mut sums = vec![0f64; params.nlist * dim];
            let mut counts = vec![0usize; params.nlist];
            for (r, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(store.vector(r as u32)) {
                    *s += f64::from(*v);
                }
            }
            for c in 0..params.nlist {
                if counts[c] > 0 {
                    for j in 0..dim {
                        centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                    }
                }
            }
        }
        let mut lists = vec![Vec::new(); params.nlist];
        for (r, &a) in assign.iter().enumerate() {
            lists[a].push(r as u32);
        }
        Ok(IvfIndex {
            params,
            dim,
            centroids,
            lists,
        })
    }

    pub fn params(&self) -> IvfParams {
        self.params
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Scans the `nprobe` lists whose centroids are nearest to `query`.
    pub fn search(&self, store: &VectorStore, query: &[f32], k: usize, nprobe: usize) -> Result<QueryResult> {
        if store.is_empty() {
            return Err(Error::EmptyStore);
        }
        store.check_query(query)?;
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(Error::InvalidConfig(format!("nprobe {nprobe} must be in 1..={}", self.nlist())));
        }
        let probes = (0..self.nlist())
            .map(|i| Cand {
                d2: sq_l2(query, self.centroid(i)),
                row: i as u32,
            })
            .collect();
        let mut cands = Vec::new();
        for p in top_k(probes, nprobe) {
            for &r in &self.lists[p.row as usize] {
                cands.push(Cand {
                    d2: sq_l2(query, store.vector(r)),
                    row: r,
                });
            }
        }
        Ok(QueryResult::from_sorted(top_k(cands, k)))
    }

    /// Every row appears in exactly one list.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &r in self.lists.iter().flatten() {
            if r as usize >= n || std::mem::replace(&mut seen[r as usize], true) {
                return false;
            }
        }
        seen.into_iter().all(|s| s)
    }
}
