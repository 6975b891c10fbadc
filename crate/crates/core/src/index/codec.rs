//! Index snapshot layout (all integers little-endian):
//!
//! ```text
//! "ICVI" | u16 version | u32 dim | u64 count
//! u64 len | adjacency section
//!     u8 mode | u32 m | u32 ef_construction | u32 ef_query
//!     u32 overfetch | u32 range_cap | u64 seed
//!     approximate mode only:
//!         u32 entry | u8 max_level
//!         per node: u32 representative, u8 level,
//!                   then per layer 0..=level: u32 n, n x u32 links
//! u64 len | vector payload section
//!     count x u64 id | count x dim x f32
//! ```

use std::collections::HashMap;

use super::graph::{Graph, VectorStore, NO_ENTRY};
use super::{IndexConfig, SearchMode, VectorIndex};
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"ICVI";
pub const INDEX_VERSION: u16 = 1;
const FORMAT: &str = "index snapshot";

pub(super) fn encode(index: &VectorIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(INDEX_MAGIC);
    w.put_u16(INDEX_VERSION);
    w.put_u32(index.dim() as u32);
    w.put_u64(index.len() as u64);

    let cfg = &index.config;
    let mut adj = ByteWriter::new();
    adj.put_u8(match cfg.mode {
        SearchMode::Exact => 0,
        SearchMode::Approximate => 1,
    });
    adj.put_u32(cfg.m as u32);
    adj.put_u32(cfg.ef_construction as u32);
    adj.put_u32(cfg.ef_query as u32);
    adj.put_u32(cfg.overfetch as u32);
    adj.put_u32(cfg.range_cap as u32);
    adj.put_u64(cfg.seed);
    if let Some(graph) = &index.graph {
        adj.put_u32(graph.entry);
        adj.put_u8(graph.max_level);
        for node in 0..graph.len() as u32 {
            let level = graph.levels[node as usize];
            adj.put_u32(graph.alias_of[node as usize]);
            adj.put_u8(level);
            for l in 0..=level {
                let links = graph.neighbors(node, l);
                adj.put_u32(links.len() as u32);
                links.iter().for_each(|&n| adj.put_u32(n));
            }
        }
    }
    w.put_section(&adj.into_inner());

    let mut payload = ByteWriter::new();
    index.ids.iter().for_each(|&id| payload.put_u64(id));
    index.store.data.iter().for_each(|&v| payload.put_f32(v));
    w.put_section(&payload.into_inner());
    w.into_inner()
}

pub(super) fn decode(bytes: &[u8]) -> Result<VectorIndex> {
    let mut r = ByteReader::new(bytes, FORMAT);
    r.header(INDEX_MAGIC, INDEX_VERSION)?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if dim == 0 {
        return Err(Error::corrupt(FORMAT, "zero dimension"));
    }

    let mut adj = r.section()?;
    let mode = match adj.u8()? {
        0 => SearchMode::Exact,
        1 => SearchMode::Approximate,
        other => return Err(Error::corrupt(FORMAT, format!("unknown mode {other}"))),
    };
    let config = IndexConfig {
        mode,
        m: adj.u32()? as usize,
        ef_construction: adj.u32()? as usize,
        ef_query: adj.u32()? as usize,
        overfetch: adj.u32()? as usize,
        range_cap: adj.u32()? as usize,
        seed: adj.u64()?,
    };

    let mut payload = r.section()?;
    r.finish()?;
    let n = payload.check_count(count, 8 + 4 * dim)?;
    let mut ids = Vec::with_capacity(n);
    let mut positions = HashMap::with_capacity(n);
    for node in 0..n {
        let id = payload.u64()?;
        if positions.insert(id, node as u32).is_some() {
            return Err(Error::corrupt(FORMAT, format!("duplicate id {id}")));
        }
        ids.push(id);
    }
    let mut store = VectorStore::new(dim);
    store.data.reserve(n * dim);
    for _ in 0..n * dim {
        store.data.push(payload.f32()?);
    }
    payload.finish()?;

    let graph = match mode {
        SearchMode::Exact => None,
        SearchMode::Approximate => Some(decode_graph(&mut adj, &config, &store)?),
    };
    adj.finish()?;

    Ok(VectorIndex {
        config,
        store,
        ids,
        positions,
        graph,
    })
}

fn decode_graph(adj: &mut ByteReader<'_>, config: &IndexConfig, store: &VectorStore) -> Result<Graph> {
    let n = store.len();
    let mut graph = Graph::new(config.m, config.ef_construction, config.seed);
    let entry = adj.u32()?;
    let max_level = adj.u8()?;
    let mut links = Vec::new();
    for node in 0..n as u32 {
        let rep = adj.u32()?;
        let level = adj.u8()?;
        if rep > node || (rep != node && (level != 0 || graph.alias_of[rep as usize] != rep)) {
            return Err(Error::corrupt(FORMAT, format!("node {node} has invalid representative {rep}")));
        }
        graph.push_node(level);
        graph.restore_alias(store, node, rep);
        for l in 0..=level {
            let len = adj.u32()? as usize;
            let limit = if l == 0 { 2 * graph.m } else { graph.m };
            if len > limit {
                return Err(Error::corrupt(FORMAT, format!("node {node} has {len} links")));
            }
            links.clear();
            for _ in 0..len {
                let peer = adj.u32()?;
                if peer as usize >= n {
                    return Err(Error::corrupt(FORMAT, format!("link to missing node {peer}")));
                }
                links.push(peer);
            }
            graph.restore_links(node, l, &links);
        }
    }
    if (n == 0) != (entry == NO_ENTRY) || (entry != NO_ENTRY && entry as usize >= n) {
        return Err(Error::corrupt(FORMAT, "invalid entry point"));
    }
    graph.entry = entry;
    graph.max_level = max_level;
    Ok(graph)
}
