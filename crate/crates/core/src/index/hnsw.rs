use std::collections::{BinaryHeap, VecDeque};
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_l2, top_k, Cand, QueryResult, VectorStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            seed: 42,
        }
    }
}

/// Layered proximity graph. `links[node][level]` holds neighbor rows; a node
/// with top level `ℓ` has `ℓ + 1` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    pub(crate) params: HnswParams,
    pub(crate) entry: u32,
    pub(crate) links: Vec<Vec<Vec<u32>>>,
}

/// Visited set for one traversal.
struct Visited(Vec<u64>);

impl Visited {
    fn new(n: usize) -> Self {
        Visited(vec![0; n.div_ceil(64)])
    }

    /// Marks `i`; true if it was not marked before.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, 1u64 << (i % 64));
        let fresh = self.0[w] & b == 0;
        self.0[w] |= b;
        fresh
    }
}

impl HnswIndex {
    pub fn level_multiplier(m: usize) -> f64 {
        1.0 / (m as f64).ln()
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn entry_point(&self) -> u32 {
        self.entry
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn level_of(&self, node: u32) -> usize {
        self.links[node as usize].len() - 1
    }

    pub fn max_level(&self) -> usize {
        self.level_of(self.entry)
    }

    pub fn neighbors(&self, node: u32, level: usize) -> &[u32] {
        &self.links[node as usize][level]
    }

    fn cap(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    /// Inserts rows in order; levels are `⌊−ln(U)·m_L⌋` from a seeded stream.
    pub fn build(store: &VectorStore, params: HnswParams) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyStore);
        }
        if params.m < 2 {
            return Err(Error::InvalidConfig("HNSW M must be >= 2".into()));
        }
        if params.ef_construction == 0 {
            return Err(Error::InvalidConfig("ef_construction must be >= 1".into()));
        }
        let ml = Self::level_multiplier(params.m);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut index = HnswIndex {
            params,
            entry: 0,
            links: Vec::with_capacity(store.len()),
        };
        for row in 0..store.len() as u32 {
            let u: f64 = rng.random::<f64>();
            let level = (-(1.0 - u).ln() * ml).floor() as usize;
            index.insert(store, row, level);
        }
        for l in 0..=index.max_level() {
            index.reconnect(store, l);
        }
        Ok(index)
    }

    /// Level-`l` nodes reachable from the entry point along level-`l` links.
    fn reachable(&self, level: usize) -> Vec<bool> {
        let mut seen = vec![false; self.links.len()];
        let mut queue = VecDeque::from([self.entry]);
        seen[self.entry as usize] = true;
        self.flood(&mut seen, &mut queue, level);
        seen
    }

    fn flood(&self, seen: &mut [bool], queue: &mut VecDeque<u32>, level: usize) {
        while let Some(x) = queue.pop_front() {
            for &nb in &self.links[x as usize][level] {
                if !std::mem::replace(&mut seen[nb as usize], true) {
                    queue.push_back(nb);
                }
            }
        }
    }

    /// Nearest-M pruning can strand nodes with no in-links. Each stranded
    /// node, in row order, gets a link from the nearest reachable node that
    /// has room, or that can give up its farthest link to a node with
    /// another in-link. Repeats until the level is connected.
    fn reconnect(&mut self, store: &VectorStore, level: usize) {
        let on_level: Vec<u32> = (0..self.links.len() as u32)
            .filter(|&r| self.links[r as usize].len() > level)
            .collect();
        for _ in 0..on_level.len() {
            let mut seen = self.reachable(level);
            if on_level.iter().all(|&r| seen[r as usize]) {
                return;
            }
            let mut in_degree = vec![0u32; self.links.len()];
            for &r in &on_level {
                for &nb in &self.links[r as usize][level] {
                    in_degree[nb as usize] += 1;
                }
            }
            for &u in &on_level {
                if seen[u as usize] {
                    continue;
                }
                let q = store.vector(u);
                let start = Cand {
                    d2: sq_l2(q, store.vector(self.entry)),
                    row: self.entry,
                };
                let near = self.search_layer(store, q, &[start], self.params.ef_construction, level);
                let Some((host, slot)) = near.iter().find_map(|c| self.free_slot(store, c.row, level, &in_degree).map(|s| (c.row, s))) else {
                    continue;
                };
                let list = &mut self.links[host as usize][level];
                match slot {
                    Some(i) => {
                        in_degree[list[i] as usize] -= 1;
                        list[i] = u;
                    }
                    None => list.push(u),
                }
                in_degree[u as usize] += 1;
                seen[u as usize] = true;
                self.flood(&mut seen, &mut VecDeque::from([u]), level);
            }
        }
    }

    /// `Some(None)` if `host` has room at `level`, `Some(Some(i))` if its
    /// `i`-th link is the farthest one whose target keeps another in-link.
    fn free_slot(&self, store: &VectorStore, host: u32, level: usize, in_degree: &[u32]) -> Option<Option<usize>> {
        let list = &self.links[host as usize][level];
        if list.len() < self.cap(level) {
            return Some(None);
        }
        let v = store.vector(host);
        list.iter()
            .enumerate()
            .filter(|(_, &nb)| in_degree[nb as usize] > 1)
            .max_by(|a, b| {
                let (da, db) = (sq_l2(v, store.vector(*a.1)), sq_l2(v, store.vector(*b.1)));
                da.total_cmp(&db).then(a.1.cmp(b.1))
            })
            .map(|(i, _)| Some(i))
    }

    fn insert(&mut self, store: &VectorStore, row: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        if row == 0 {
            self.entry = 0;
            return;
        }
        let q = store.vector(row);
        let top = self.max_level();
        let mut ep = Cand {
            d2: sq_l2(q, store.vector(self.entry)),
            row: self.entry,
        };
        for l in (level + 1..=top).rev() {
            ep = self.greedy(store, q, ep, l);
        }
        let mut eps = vec![ep];
        for l in (0..=level.min(top)).rev() {
            let found = self.search_layer(store, q, &eps, self.params.ef_construction, l);
            let chosen: Vec<u32> = found.iter().take(self.cap(l)).map(|c| c.row).collect();
            for &nb in &chosen {
                self.links[nb as usize][l].push(row);
                if self.links[nb as usize][l].len() > self.cap(l) {
                    self.prune(store, nb, l);
                }
            }
            self.links[row as usize][l] = chosen;
            eps = found;
        }
        if level > top {
            self.entry = row;
        }
    }

    /// Keeps the `cap` nearest neighbors of `node` at `level`.
    fn prune(&mut self, store: &VectorStore, node: u32, level: usize) {
        let v = store.vector(node);
        let cands = self.links[node as usize][level]
            .iter()
            .map(|&r| Cand {
                d2: sq_l2(v, store.vector(r)),
                row: r,
            })
            .collect();
        let kept = top_k(cands, self.cap(level));
        self.links[node as usize][level] = kept.into_iter().map(|c| c.row).collect();
    }

    fn greedy(&self, store: &VectorStore, q: &[f32], mut cur: Cand, level: usize) -> Cand {
        loop {
            let mut best = cur;
            for &nb in self.neighbors(cur.row, level) {
                let c = Cand {
                    d2: sq_l2(q, store.vector(nb)),
                    row: nb,
                };
                if c < best {
                    best = c;
                }
            }
            if best == cur {
                return cur;
            }
            cur = best;
        }
    }

    /// Beam search at one level; returns up to `ef` candidates, nearest first.
    fn search_layer(&self, store: &VectorStore, q: &[f32], eps: &[Cand], ef: usize, level: usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.links.len());
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e.row) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= ef && c > *best.peek().unwrap() {
                break;
            }
            for &nb in self.neighbors(c.row, level) {
                if !visited.insert(nb) {
                    continue;
                }
                let n = Cand {
                    d2: sq_l2(q, store.vector(nb)),
                    row: nb,
                };
                if best.len() < ef || n < *best.peek().unwrap() {
                    frontier.push(Reverse(n));
                    best.push(n);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    pub fn search(&self, store: &VectorStore, query: &[f32], k: usize, ef_search: usize) -> Result<QueryResult> {
        if self.is_empty() || store.is_empty() {
            return Err(Error::EmptyIndex);
        }
        store.check_query(query)?;
        if ef_search < k {
            return Err(Error::InvalidConfig(format!("ef_search {ef_search} < k {k}")));
        }
        if k == 0 {
            return Ok(QueryResult::default());
        }
        let mut ep = Cand {
            d2: sq_l2(query, store.vector(self.entry)),
            row: self.entry,
        };
        for l in (1..=self.max_level()).rev() {
            ep = self.greedy(store, query, ep, l);
        }
        let mut found = self.search_layer(store, query, &[ep], ef_search, 0);
        found.truncate(k);
        Ok(QueryResult::from_sorted(found))
    }

    /// Structural checks: degree caps, level nesting, valid references,
    /// entry point on the top level and level-0 reachability from it.
    pub fn audit(&self) -> HnswAudit {
        let n = self.links.len();
        let mut violations = Vec::new();
        if n == 0 {
            violations.push("index is empty".to_string());
            return HnswAudit { violations };
        }
        let top = self.links.iter().map(|l| l.len() - 1).max().unwrap();
        if (self.entry as usize) >= n || self.level_of(self.entry) != top {
            violations.push(format!("entry point {} is not on the top level {top}", self.entry));
        }
        for (node, levels) in self.links.iter().enumerate() {
            for (l, nbrs) in levels.iter().enumerate() {
                if nbrs.len() > self.cap(l) {
                    violations.push(format!("node {node} level {l}: degree {} > {}", nbrs.len(), self.cap(l)));
                }
                for &nb in nbrs {
                    if nb as usize >= n {
                        violations.push(format!("node {node} level {l}: reference {nb} out of range"));
                    } else if nb as usize == node {
                        violations.push(format!("node {node} level {l}: self loop"));
                    } else if self.links[nb as usize].len() <= l {
                        violations.push(format!("node {node} level {l}: neighbor {nb} absent at that level"));
                    }
                }
            }
        }
        if violations.is_empty() {
            let unreachable = self.reachable(0).iter().filter(|s| !**s).count();
            if unreachable > 0 {
                violations.push(format!("{unreachable} nodes unreachable at level 0"));
            }
        }
        HnswAudit { violations }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HnswAudit {
    pub violations: Vec<String>,
}

impl HnswAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}
