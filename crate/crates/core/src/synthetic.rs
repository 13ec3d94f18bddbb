//! Seeded generator for small tree-structured dynamic graphs.
//!
//! Nodes hang off a random recursive tree. Each snapshot keeps a fraction of
//! the previous snapshot's edges and adds new ones between nodes a short
//! random walk apart on the tree, so edges are local in the hierarchy and
//! partly persistent over time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph_data::{DynamicGraph, EdgeStream, Snapshot, TimedEdge};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_snapshots: usize,
    /// Target number of undirected edges per snapshot.
    pub edges_per_snapshot: usize,
    /// Probability that an edge survives into the next snapshot.
    pub persistence: f64,
    /// Longest tree walk used to connect a new edge.
    pub max_hops: usize,
    /// Index of the first test snapshot.
    pub split: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_nodes: 40,
            num_snapshots: 8,
            edges_per_snapshot: 60,
            persistence: 0.5,
            max_hops: 3,
            split: 6,
            seed: 0,
        }
    }
}

/// Parent of every node in a random recursive tree; the root is its own parent.
pub fn random_tree(num_nodes: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..num_nodes)
        .map(|i| if i == 0 { 0 } else { rng.random_range(0..i) })
        .collect()
}

fn tree_neighbors(parents: &[usize]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); parents.len()];
    for (i, &p) in parents.iter().enumerate().skip(1) {
        adj[i].push(p);
        adj[p].push(i);
    }
    adj
}

/// Per-snapshot undirected edge lists, `(i, j)` with `i < j`.
pub fn hierarchical_edges(cfg: &SyntheticConfig) -> Result<Vec<Vec<(usize, usize)>>> {
    if cfg.num_nodes < 2 {
        return Err(Error::config("num_nodes", "at least 2 nodes are required"));
    }
    if !(0.0..=1.0).contains(&cfg.persistence) {
        return Err(Error::config("persistence", "must lie in [0, 1]"));
    }
    let max_hops = cfg.max_hops.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adj = tree_neighbors(&random_tree(cfg.num_nodes, &mut rng));
    let capacity = cfg.num_nodes * (cfg.num_nodes - 1) / 2;
    let target = cfg.edges_per_snapshot.clamp(1, capacity);
    let mut out: Vec<Vec<(usize, usize)>> = Vec::with_capacity(cfg.num_snapshots);
    let mut prev: Vec<(usize, usize)> = Vec::new();
    for _ in 0..cfg.num_snapshots {
        let mut edges: Vec<(usize, usize)> = prev.iter().copied().filter(|_| rng.random_bool(cfg.persistence)).collect();
        edges.truncate(target);
        let mut attempts = 0;
        while edges.len() < target && attempts < 100 * target {
            attempts += 1;
            let u = rng.random_range(0..cfg.num_nodes);
            let hops = rng.random_range(1..=max_hops);
            let mut v = u;
            for _ in 0..hops {
                let nb = &adj[v];
                v = nb[rng.random_range(0..nb.len())];
            }
            if u == v {
                continue;
            }
            let e = (u.min(v), u.max(v));
            if !edges.contains(&e) {
                edges.push(e);
            }
        }
        edges.sort_unstable();
        prev = edges.clone();
        out.push(edges);
    }
    Ok(out)
}

pub fn hierarchical_dynamic_graph(cfg: &SyntheticConfig) -> Result<DynamicGraph> {
    let snapshots = hierarchical_edges(cfg)?
        .into_iter()
        .enumerate()
        .map(|(t, e)| Snapshot::new(t, cfg.num_nodes, e))
        .collect::<Result<Vec<_>>>()?;
    DynamicGraph::new(snapshots, cfg.split)
}

/// The same graph as a timestamped stream, snapshot `t` at timestamp `t`.
pub fn hierarchical_edge_stream(cfg: &SyntheticConfig) -> Result<EdgeStream> {
    let edges = hierarchical_edges(cfg)?
        .into_iter()
        .enumerate()
        .flat_map(|(t, es)| es.into_iter().map(move |(src, dst)| TimedEdge { src, dst, ts: t as i64 }))
        .collect();
    Ok(EdgeStream {
        edges,
        num_nodes: cfg.num_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig::default();
        let a = hierarchical_edges(&cfg).unwrap();
        assert_eq!(a, hierarchical_edges(&cfg).unwrap());
        assert_eq!(a.len(), cfg.num_snapshots);
        for s in &a {
            assert_eq!(s.len(), cfg.edges_per_snapshot);
            assert!(s.iter().all(|&(i, j)| i < j && j < cfg.num_nodes));
        }
    }

    #[test]
    fn graph_has_split() {
        let g = hierarchical_dynamic_graph(&SyntheticConfig::default()).unwrap();
        assert_eq!(g.split(), 6);
        assert_eq!(g.len(), 8);
    }
}
