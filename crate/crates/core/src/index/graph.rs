//! Hierarchical navigable small-world graph over the vectors of a [`super::VectorIndex`].
//!
//! Layer 0 holds every node with up to `2 * m` links stored in one flat array;
//! upper layers are sparse and kept per node. Level assignment is a pure
//! function of the seed and the insertion position, so a replay of the same
//! insertions rebuilds the same graph.
//!
//! Bit-identical vectors are not linked into the graph. The first copy is the
//! representative and later copies are aliases that searches report alongside
//! it; linking exact duplicates starves late copies of incoming edges.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BinaryHeap, HashMap};
use std::hash::{Hash, Hasher};

use parking_lot::Mutex;

use crate::vector::cosine_distance;

const MAX_LEVEL: u8 = 16;
pub(crate) const NO_ENTRY: u32 = u32::MAX;

/// Contiguous row-major storage of unit vectors.
#[derive(Debug, Clone, Default)]
pub(crate) struct VectorStore {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    #[inline]
    pub fn get(&self, node: u32) -> &[f32] {
        let start = node as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn push(&mut self, v: &[f32]) -> u32 {
        let node = self.len() as u32;
        self.data.extend_from_slice(v);
        node
    }
}

/// A node paired with its distance to the current query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub dist: f32,
    pub node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.node.cmp(&other.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Epoch-stamped visited marks, reused across queries.
#[derive(Debug, Default)]
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `node`; returns false if it was already marked this epoch.
    #[inline]
    fn insert(&mut self, node: u32) -> bool {
        let slot = &mut self.marks[node as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[derive(Debug)]
pub(crate) struct Graph {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
    pub levels: Vec<u8>,
    layer0: Vec<u32>,
    layer0_len: Vec<u32>,
    upper: Vec<Vec<Vec<u32>>>,
    pub entry: u32,
    pub max_level: u8,
    /// Representative node of each node (itself unless it is an alias).
    pub alias_of: Vec<u32>,
    aliases: HashMap<u32, Vec<u32>>,
    by_content: HashMap<u64, u32>,
    visited: Mutex<Vec<Visited>>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Self {
            m: self.m,
            ef_construction: self.ef_construction,
            seed: self.seed,
            levels: self.levels.clone(),
            layer0: self.layer0.clone(),
            layer0_len: self.layer0_len.clone(),
            upper: self.upper.clone(),
            entry: self.entry,
            max_level: self.max_level,
            alias_of: self.alias_of.clone(),
            aliases: self.aliases.clone(),
            by_content: self.by_content.clone(),
            visited: Mutex::new(Vec::new()),
        }
    }
}

fn content_hash(v: &[f32]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Graph {
    pub fn new(m: usize, ef_construction: usize, seed: u64) -> Self {
        Self {
            m: m.max(2),
            ef_construction: ef_construction.max(1),
            seed,
            levels: Vec::new(),
            layer0: Vec::new(),
            layer0_len: Vec::new(),
            upper: Vec::new(),
            entry: NO_ENTRY,
            max_level: 0,
            alias_of: Vec::new(),
            aliases: HashMap::new(),
            by_content: HashMap::new(),
            visited: Mutex::new(Vec::new()),
        }
    }

    #[inline]
    fn m0(&self) -> usize {
        self.m * 2
    }

    fn max_links(&self, level: u8) -> usize {
        if level == 0 {
            self.m0()
        } else {
            self.m
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    /// Geometric level draw keyed on (seed, insertion position).
    fn level_for(&self, node: u32) -> u8 {
        let bits = splitmix64(self.seed ^ splitmix64(u64::from(node)));
        // 53 random mantissa bits mapped into (0, 1].
        let u = ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let ml = 1.0 / (self.m as f64).ln();
        ((-u.ln() * ml).floor() as u64).min(u64::from(MAX_LEVEL)) as u8
    }

    #[inline]
    pub fn neighbors(&self, node: u32, level: u8) -> &[u32] {
        if level == 0 {
            let start = node as usize * self.m0();
            let len = self.layer0_len[node as usize] as usize;
            &self.layer0[start..start + len]
        } else {
            &self.upper[node as usize][level as usize - 1]
        }
    }

    fn set_neighbors(&mut self, node: u32, level: u8, links: &[u32]) {
        if level == 0 {
            let m0 = self.m0();
            debug_assert!(links.len() <= m0);
            let start = node as usize * m0;
            self.layer0[start..start + links.len()].copy_from_slice(links);
            self.layer0_len[node as usize] = links.len() as u32;
        } else {
            let slot = &mut self.upper[node as usize][level as usize - 1];
            slot.clear();
            slot.extend_from_slice(links);
        }
    }

    /// Appends an empty node at `level`; used by insertion and by snapshot decoding.
    pub fn push_node(&mut self, level: u8) -> u32 {
        let node = self.levels.len() as u32;
        self.alias_of.push(node);
        self.levels.push(level);
        self.layer0
            .extend(std::iter::repeat_n(0u32, self.m0()));
        self.layer0_len.push(0);
        self.upper.push(vec![Vec::new(); level as usize]);
        node
    }

    pub fn restore_links(&mut self, node: u32, level: u8, links: &[u32]) {
        self.set_neighbors(node, level, links);
    }

    /// Records `node` as a copy of `rep`; `node` must have been pushed at level 0.
    pub fn restore_alias(&mut self, store: &VectorStore, node: u32, rep: u32) {
        if rep == node {
            self.by_content
                .entry(content_hash(store.get(node)))
                .or_insert(node);
        } else {
            self.alias_of[node as usize] = rep;
            self.aliases.entry(rep).or_default().push(node);
        }
    }

    fn find_copy(&self, store: &VectorStore, node: u32) -> Option<u32> {
        let v = store.get(node);
        self.by_content
            .get(&content_hash(v))
            .copied()
            .filter(|&rep| store.get(rep) == v)
    }

    fn with_visited<R>(&self, n: usize, f: impl FnOnce(&mut Visited) -> R) -> R {
        let mut visited = self.visited.lock().pop().unwrap_or_default();
        visited.reset(n);
        let out = f(&mut visited);
        self.visited.lock().push(visited);
        out
    }

    /// Beam search restricted to one layer. Returns up to `ef` nodes sorted by distance.
    fn search_layer(
        &self,
        store: &VectorStore,
        query: &[f32],
        entries: &[Scored],
        ef: usize,
        level: u8,
    ) -> Vec<Scored> {
        self.with_visited(self.len(), |visited| {
            let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
            let mut results: BinaryHeap<Scored> = BinaryHeap::new();
            for &e in entries {
                if visited.insert(e.node) {
                    candidates.push(Reverse(e));
                    results.push(e);
                }
            }
            while results.len() > ef {
                results.pop();
            }
            while let Some(Reverse(current)) = candidates.pop() {
                let worst = results.peek().map_or(f32::INFINITY, |s| s.dist);
                if current.dist > worst && results.len() >= ef {
                    break;
                }
                for &next in self.neighbors(current.node, level) {
                    if !visited.insert(next) {
                        continue;
                    }
                    let dist = cosine_distance(query, store.get(next));
                    let worst = results.peek().map_or(f32::INFINITY, |s| s.dist);
                    if results.len() < ef || dist < worst {
                        let scored = Scored { dist, node: next };
                        candidates.push(Reverse(scored));
                        results.push(scored);
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
            results.into_sorted_vec()
        })
    }

    /// Greedy descent from the entry point down to (but excluding) `target_level`.
    fn descend(&self, store: &VectorStore, query: &[f32], target_level: u8) -> Scored {
        let mut best = Scored {
            dist: cosine_distance(query, store.get(self.entry)),
            node: self.entry,
        };
        let mut level = self.max_level;
        while level > target_level {
            let mut changed = true;
            while changed {
                changed = false;
                for &next in self.neighbors(best.node, level) {
                    let cand = Scored {
                        dist: cosine_distance(query, store.get(next)),
                        node: next,
                    };
                    if cand < best {
                        best = cand;
                        changed = true;
                    }
                }
            }
            level -= 1;
        }
        best
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every already kept neighbor, then backfill with pruned ones.
    fn select_neighbors(&self, store: &VectorStore, sorted: &[Scored], limit: usize) -> Vec<u32> {
        let mut kept: Vec<Scored> = Vec::with_capacity(limit);
        let mut pruned: Vec<Scored> = Vec::new();
        for &cand in sorted {
            if kept.len() >= limit {
                break;
            }
            let cv = store.get(cand.node);
            let diverse = kept
                .iter()
                .all(|k| cand.dist < cosine_distance(cv, store.get(k.node)));
            if diverse {
                kept.push(cand);
            } else {
                pruned.push(cand);
            }
        }
        for cand in pruned {
            if kept.len() >= limit {
                break;
            }
            kept.push(cand);
        }
        kept.into_iter().map(|s| s.node).collect()
    }

    /// Inserts the vector already stored at position `node` in `store`.
    pub fn insert(&mut self, store: &VectorStore, node: u32) {
        if let Some(rep) = self.find_copy(store, node) {
            self.push_node(0);
            self.alias_of[node as usize] = rep;
            self.aliases.entry(rep).or_default().push(node);
            return;
        }
        self.by_content
            .entry(content_hash(store.get(node)))
            .or_insert(node);
        let level = self.level_for(node);
        let pushed = self.push_node(level);
        debug_assert_eq!(pushed, node);
        if self.entry == NO_ENTRY {
            self.entry = node;
            self.max_level = level;
            return;
        }
        let query = store.get(node);
        let mut entries = vec![self.descend(store, query, level)];
        let top = level.min(self.max_level);
        for lvl in (0..=top).rev() {
            let found = self.search_layer(store, query, &entries, self.ef_construction, lvl);
            let chosen = self.select_neighbors(store, &found, self.m);
            self.set_neighbors(node, lvl, &chosen);
            for &peer in &chosen {
                self.link(store, peer, node, lvl);
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = node;
        }
    }

    /// Adds `new` to `peer`'s list at `level`, pruning with the heuristic on overflow.
    fn link(&mut self, store: &VectorStore, peer: u32, new: u32, level: u8) {
        let limit = self.max_links(level);
        let current = self.neighbors(peer, level);
        if current.len() < limit {
            let mut links = current.to_vec();
            links.push(new);
            self.set_neighbors(peer, level, &links);
            return;
        }
        let pv = store.get(peer);
        let mut scored: Vec<Scored> = current
            .iter()
            .chain(std::iter::once(&new))
            .map(|&n| Scored {
                dist: cosine_distance(pv, store.get(n)),
                node: n,
            })
            .collect();
        scored.sort_unstable();
        let chosen = self.select_neighbors(store, &scored, limit);
        self.set_neighbors(peer, level, &chosen);
    }

    /// Approximate k nearest neighbors as sorted (distance, node) pairs.
    pub fn search(&self, store: &VectorStore, query: &[f32], k: usize, ef: usize) -> Vec<Scored> {
        if self.entry == NO_ENTRY || k == 0 {
            return Vec::new();
        }
        let start = self.descend(store, query, 0);
        let found = self.search_layer(store, query, &[start], ef.max(k), 0);
        let mut expanded = Vec::with_capacity(found.len());
        for s in found {
            expanded.push(s);
            if let Some(copies) = self.aliases.get(&s.node) {
                expanded.extend(copies.iter().map(|&node| Scored { dist: s.dist, node }));
            }
        }
        expanded.sort_unstable();
        expanded.truncate(k);
        expanded
    }
}
