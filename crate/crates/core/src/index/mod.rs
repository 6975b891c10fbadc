//! Online nearest-neighbor index over unit vectors under cosine distance.
//!
//! Two search modes share one surface:
//!
//! - [`SearchMode::Approximate`] maintains an HNSW graph, built incrementally
//!   as vectors arrive.
//! - [`SearchMode::Exact`] keeps only the flat vector payload and answers by
//!   full scan. It is the reference the graph is measured against, and the
//!   cheap choice for pools that are only ever scanned.
//!
//! Range queries are k-NN queries with post-filtering: the fetch size starts
//! at the configured overfetch and doubles while every hit still lies inside
//! the radius, up to the range cap.

mod codec;
mod graph;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vector::{cosine_distance, EmbeddingVector};

use graph::{Graph, Scored, VectorStore};

pub use codec::{INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Exact,
    Approximate,
}

impl SearchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Exact => "exact",
            SearchMode::Approximate => "approximate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(SearchMode::Exact),
            "approximate" | "approx" | "hnsw" => Some(SearchMode::Approximate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub mode: SearchMode,
    /// Links per node on upper layers; layer 0 keeps twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_query: usize,
    /// Initial fetch size of a range query.
    pub overfetch: usize,
    /// Largest fetch size a range query grows to.
    pub range_cap: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Approximate,
            m: 16,
            ef_construction: 200,
            ef_query: 64,
            overfetch: 40,
            range_cap: 256,
            seed: 0,
        }
    }
}

impl IndexConfig {
    /// Overfetch derived from a neighbor count: `4 * k`, capped at `range_cap`.
    pub fn with_neighbor_count(mut self, k: usize) -> Self {
        self.overfetch = (4 * k).clamp(1, self.range_cap.max(1));
        self
    }
}

/// One search result. Results are ordered by non-increasing similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    pub id: u64,
    pub similarity: f32,
    pub distance: f32,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    config: IndexConfig,
    store: VectorStore,
    ids: Vec<u64>,
    positions: HashMap<u64, u32>,
    graph: Option<Graph>,
}

impl VectorIndex {
    pub fn new(dim: usize, config: IndexConfig) -> Self {
        let graph = match config.mode {
            SearchMode::Approximate => {
                Some(Graph::new(config.m, config.ef_construction, config.seed))
            }
            SearchMode::Exact => None,
        };
        Self {
            config,
            store: VectorStore::new(dim),
            ids: Vec::new(),
            positions: HashMap::new(),
            graph,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.positions.contains_key(&id)
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// The stored (normalized) vector for `id`.
    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.positions.get(&id).map(|&p| self.store.get(p))
    }

    pub fn insert(&mut self, id: u64, v: &EmbeddingVector) -> Result<()> {
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.dim(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let node = self.store.push(v.as_slice());
        self.ids.push(id);
        self.positions.insert(id, node);
        if let Some(graph) = self.graph.as_mut() {
            graph.insert(&self.store, node);
        }
        Ok(())
    }

    fn check_query(&self, q: &EmbeddingVector) -> Result<()> {
        if q.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: q.dim(),
            });
        }
        Ok(())
    }

    /// The `k` nearest neighbors of `q` (fewer if the index is smaller).
    pub fn knn(&self, q: &EmbeddingVector, k: usize) -> Result<Vec<NeighborHit>> {
        self.check_query(q)?;
        Ok(self.knn_raw(q.as_slice(), k))
    }

    /// Same as [`knn`](Self::knn) for a slice already known to be unit length
    /// and of the right dimension.
    pub(crate) fn knn_raw(&self, q: &[f32], k: usize) -> Vec<NeighborHit> {
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let ef = self.config.ef_query.max(k);
        let scored = match &self.graph {
            Some(graph) if !self.scan_is_cheaper(ef) => graph.search(&self.store, q, k, ef),
            _ => self.scan(q, k),
        };
        scored
            .into_iter()
            .map(|s| self.hit(s))
            .collect()
    }

    /// Exhaustive k-NN by full scan, regardless of mode.
    pub fn knn_exact(&self, q: &EmbeddingVector, k: usize) -> Result<Vec<NeighborHit>> {
        self.check_query(q)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .scan(q.as_slice(), k)
            .into_iter()
            .map(|s| self.hit(s))
            .collect())
    }

    fn scan(&self, q: &[f32], k: usize) -> Vec<Scored> {
        let mut all: Vec<Scored> = (0..self.len() as u32)
            .map(|node| Scored {
                dist: cosine_distance(q, self.store.get(node)),
                node,
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable(k - 1);
            all.truncate(k);
        }
        all.sort_unstable();
        all
    }

    /// A graph search with beam `ef` evaluates on the order of `ef * 2m`
    /// candidates; below that size a full scan is both exact and faster.
    fn scan_is_cheaper(&self, ef: usize) -> bool {
        self.len() <= ef * 2 * self.config.m
    }

    /// One pass over the store keeping what lies inside the radius; the
    /// `cap` nearest survive.
    fn scan_within(&self, q: &[f32], max_distance: f32, cap: usize) -> Vec<NeighborHit> {
        let mut inside: Vec<Scored> = (0..self.len() as u32)
            .filter_map(|node| {
                let dist = cosine_distance(q, self.store.get(node));
                (dist <= max_distance).then_some(Scored { dist, node })
            })
            .collect();
        if cap < inside.len() {
            inside.select_nth_unstable(cap - 1);
            inside.truncate(cap);
        }
        inside.sort_unstable();
        inside
            .into_iter()
            .map(|s| self.hit(s))
            .filter(|h| h.distance <= max_distance)
            .collect()
    }

    fn hit(&self, s: Scored) -> NeighborHit {
        let similarity = (1.0 - s.dist).clamp(-1.0, 1.0);
        NeighborHit {
            id: self.ids[s.node as usize],
            similarity,
            distance: 1.0 - similarity,
        }
    }

    /// All hits within `max_distance` of `q`, bounded by the configured range cap.
    pub fn range(&self, q: &EmbeddingVector, max_distance: f32) -> Result<Vec<NeighborHit>> {
        self.range_with_cap(q, max_distance, self.config.range_cap)
    }

    pub fn range_with_cap(
        &self,
        q: &EmbeddingVector,
        max_distance: f32,
        cap: usize,
    ) -> Result<Vec<NeighborHit>> {
        self.check_query(q)?;
        check_radius(max_distance)?;
        Ok(self.range_raw(q.as_slice(), max_distance, cap))
    }

    pub(crate) fn range_raw(&self, q: &[f32], max_distance: f32, cap: usize) -> Vec<NeighborHit> {
        let cap = cap.max(1);
        if self.graph.is_none() || self.scan_is_cheaper(self.config.ef_query.max(cap)) {
            return self.scan_within(q, max_distance, cap);
        }
        let mut fetch = self.config.overfetch.clamp(1, cap);
        loop {
            let mut hits = self.knn_raw(q, fetch);
            let exhausted = hits.len() < fetch;
            let saturated = hits.last().is_some_and(|h| h.distance <= max_distance);
            if exhausted || !saturated || fetch >= cap {
                hits.retain(|h| h.distance <= max_distance);
                return hits;
            }
            fetch = (fetch * 2).min(cap);
        }
    }

    /// Serializes the index into the `ICVI` snapshot format.
    pub fn snapshot(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        codec::decode(bytes)
    }
}

pub(crate) fn check_radius(max_distance: f32) -> Result<()> {
    if !(0.0..=2.0).contains(&max_distance) {
        return Err(Error::InvalidArgument(format!(
            "max_distance {max_distance} outside [0, 2]"
        )));
    }
    Ok(())
}
