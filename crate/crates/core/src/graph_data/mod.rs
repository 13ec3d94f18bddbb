//! Discrete dynamic graphs: ingestion, snapshot partitioning, diffusion
//! operators, negative sampling and tree-likeness estimates.

mod diffusion;
mod gromov;
mod io;
mod sampling;

pub use diffusion::{build_diffusion_stack, normalized_adjacency, stationary_truncation, DiffusionStack};
pub use gromov::{bfs_distances, gromov_delta_estimate, largest_component};
pub use io::{load_edge_file, load_edge_stream, load_snapshot_dir, DataFormat, EdgeStream, TimedEdge};
pub use sampling::{sample_negative_edges, sample_negative_pairs, EdgeSampleBatch, MAX_REJECTIONS_PER_SAMPLE};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Edges observed within one time bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    edges: Vec<(usize, usize)>,
    num_nodes: usize,
}

impl Snapshot {
    /// Deduplicates, sorts and drops self-loops.
    pub fn new(index: usize, num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::Shape(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if i != j {
                set.insert((i, j));
            }
        }
        Ok(Snapshot {
            index,
            edges: set.into_iter().collect(),
            num_nodes,
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i, j)).is_ok()
    }

    /// True if the pair is present in either orientation.
    pub fn connects(&self, i: usize, j: usize) -> bool {
        self.contains(i, j) || self.contains(j, i)
    }

    /// Unordered pairs `(min, max)` without duplicates.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        set.into_iter().collect()
    }
}

/// How the snapshot sequence is cut into training and test parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// `train:test`, resolved as `round(T · train / (train + test))`.
    Ratio(u32, u32),
    /// Index of the first test snapshot.
    Index(usize),
}

impl SplitSpec {
    pub fn resolve(self, num_snapshots: usize) -> Result<usize> {
        let split = match self {
            SplitSpec::Ratio(a, b) => {
                if a == 0 || b == 0 {
                    return Err(Error::config("split", "ratio parts must be positive"));
                }
                let t = num_snapshots as f64 * a as f64 / (a as f64 + b as f64);
                t.round() as usize
            }
            SplitSpec::Index(i) => i,
        };
        if split < 1 || split >= num_snapshots {
            return Err(Error::config(
                "split",
                format!("split {split} must lie in [1, {}] for {num_snapshots} snapshots", num_snapshots - 1),
            ));
        }
        Ok(split)
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Ratio(a, b) => write!(f, "{a}:{b}"),
            SplitSpec::Index(i) => write!(f, "{i}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("split", format!("expected `train:test` or an index, got `{s}`"));
        match s.split_once(':') {
            Some((a, b)) => Ok(SplitSpec::Ratio(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            )),
            None => Ok(SplitSpec::Index(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

/// Ordered snapshots `G_0 … G_T` over a fixed node set.
#[derive(Clone, Debug)]
pub struct DynamicGraph {
    snapshots: Vec<Snapshot>,
    split: usize,
    num_nodes: usize,
    warnings: Vec<String>,
}

impl DynamicGraph {
    pub fn new(snapshots: Vec<Snapshot>, split: usize) -> Result<Self> {
        let num_nodes = snapshots
            .first()
            .map(|s| s.num_nodes)
            .ok_or_else(|| Error::EmptyInput("dynamic graph without snapshots".into()))?;
        if snapshots.iter().any(|s| s.num_nodes != num_nodes) {
            return Err(Error::Shape("snapshots disagree on the node count".into()));
        }
        if snapshots.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::Shape("snapshot indices must strictly increase".into()));
        }
        if split < 1 || split >= snapshots.len() {
            return Err(Error::config(
                "split",
                format!("split {split} outside [1, {}]", snapshots.len() - 1),
            ));
        }
        Ok(DynamicGraph {
            snapshots,
            split,
            num_nodes,
            warnings: Vec::new(),
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> &Snapshot {
        &self.snapshots[t]
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Indices of the test snapshots.
    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.split..self.snapshots.len()
    }

    /// All edges of every snapshot merged into one snapshot.
    pub fn union(&self) -> Snapshot {
        let edges = self.snapshots.iter().flat_map(|s| s.edges.iter().copied());
        Snapshot::new(0, self.num_nodes, edges).expect("edges already validated")
    }
}

/// Buckets timestamped edges into `num_snapshots` equal-width intervals over
/// `[min_ts, max_ts]`. Empty buckets are kept and reported as warnings.
pub fn partition_snapshots(stream: &EdgeStream, num_snapshots: usize, split: SplitSpec) -> Result<DynamicGraph> {
    if num_snapshots < 2 {
        return Err(Error::config("snapshots", "at least 2 snapshots are required"));
    }
    if stream.edges.is_empty() {
        return Err(Error::EmptyInput("edge stream has no edges".into()));
    }
    let min = stream.edges.iter().map(|e| e.ts).min().unwrap() as i128;
    let max = stream.edges.iter().map(|e| e.ts).max().unwrap() as i128;
    let width = max - min + 1;
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_snapshots];
    for e in &stream.edges {
        let b = ((e.ts as i128 - min) * num_snapshots as i128 / width) as usize;
        buckets[b].push((e.src, e.dst));
    }
    let mut warnings = Vec::new();
    let mut snapshots = Vec::with_capacity(num_snapshots);
    for (t, edges) in buckets.into_iter().enumerate() {
        let s = Snapshot::new(t, stream.num_nodes, edges)?;
        if s.is_empty() {
            let msg = format!("snapshot {t} has no edges");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        snapshots.push(s);
    }
    let split = split.resolve(num_snapshots)?;
    let mut graph = DynamicGraph::new(snapshots, split)?;
    graph.warnings = warnings;
    Ok(graph)
}
