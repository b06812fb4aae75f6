use std::num::NonZeroUsize;

use lru::LruCache;

use super::QueryResult;

/// LRU cache of query results keyed by the query quantized to a grid of
/// `1 / scale` plus `k`.
pub struct ResultCache {
    scale: f32,
    inner: LruCache<(Vec<i32>, usize), QueryResult>,
    hits: u64,
    misses: u64,
}

impl ResultCache {
    pub fn new(capacity: NonZeroUsize, scale: f32) -> Self {
        ResultCache {
            scale,
            inner: LruCache::new(capacity),
            hits: 0,
            misses: 0,
        }
    }

    fn key(&self, query: &[f32], k: usize) -> (Vec<i32>, usize) {
        (query.iter().map(|x| (x * self.scale).round() as i32).collect(), k)
    }

    pub fn get_or_insert_with<E>(
        &mut self,
        query: &[f32],
        k: usize,
        search: impl FnOnce() -> Result<QueryResult, E>,
    ) -> Result<QueryResult, E> {
        let key = self.key(query, k);
        if let Some(r) = self.inner.get(&key) {
            self.hits += 1;
            return Ok(r.clone());
        }
        self.misses += 1;
        let r = search()?;
        self.inner.put(key, r.clone());
        Ok(r)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }
}
