use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use super::{DynamicGraph, Snapshot, SplitSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedEdge {
    pub src: usize,
    pub dst: usize,
    pub ts: i64,
}

/// Parsed edges with node ids remapped to `0..num_nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeStream {
    pub edges: Vec<TimedEdge>,
    pub num_nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// One `src dst timestamp` line per edge.
    Tsv,
    /// A directory of `000.tsv, 001.tsv, …`, one `src dst` line per edge.
    Snapshots,
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Tsv => "tsv",
            DataFormat::Snapshots => "snapshots",
        })
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(DataFormat::Tsv),
            "snapshots" => Ok(DataFormat::Snapshots),
            other => Err(Error::config("format", format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Default)]
struct IdMap(HashMap<i64, usize>);

impl IdMap {
    fn id(&mut self, raw: i64) -> usize {
        let next = self.0.len();
        *self.0.entry(raw).or_insert(next)
    }
}

fn parse_fields(line: &str, lineno: usize, want: usize) -> Result<Vec<i64>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < want {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {want} fields, found {}", fields.len()),
        });
    }
    fields[..want]
        .iter()
        .map(|f| {
            f.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("`{f}` is not an integer"),
            })
        })
        .collect()
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Reads `src<TAB>dst<TAB>timestamp` lines. Node ids are remapped in order of
/// first appearance. Blank lines and `#` comments are skipped.
pub fn load_edge_stream<R: BufRead>(reader: R) -> Result<EdgeStream> {
    let mut ids = IdMap::default();
    let mut edges = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let f = parse_fields(&line, k + 1, 3)?;
        let src = ids.id(f[0]);
        let dst = ids.id(f[1]);
        edges.push(TimedEdge { src, dst, ts: f[2] });
    }
    if edges.is_empty() {
        return Err(Error::EmptyInput("edge stream has no edges".into()));
    }
    Ok(EdgeStream {
        edges,
        num_nodes: ids.0.len(),
    })
}

pub fn load_edge_file(path: &Path) -> Result<EdgeStream> {
    load_edge_stream(BufReader::new(File::open(path)?))
}

/// Loads a pre-split directory of `NNN.tsv` files in lexicographic order.
/// Node ids are remapped jointly across files.
pub fn load_snapshot_dir(dir: &Path, split: SplitSpec) -> Result<DynamicGraph> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .tsv snapshots in {}", dir.display())));
    }
    let mut ids = IdMap::default();
    let mut raw = Vec::with_capacity(files.len());
    for path in &files {
        let mut edges = Vec::new();
        for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if is_skippable(&line) {
                continue;
            }
            let f = parse_fields(&line, k + 1, 2).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?;
            edges.push((ids.id(f[0]), ids.id(f[1])));
        }
        raw.push(edges);
    }
    let n = ids.0.len();
    if n == 0 {
        return Err(Error::EmptyInput("snapshot directory has no edges".into()));
    }
    let mut warnings = Vec::new();
    let snapshots = raw
        .into_iter()
        .enumerate()
        .map(|(t, e)| {
            let s = Snapshot::new(t, n, e)?;
            if s.is_empty() {
                let msg = format!("snapshot {t} has no edges");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = split.resolve(snapshots.len())?;
    let mut g = DynamicGraph::new(snapshots, split)?;
    g.warnings = warnings;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_remaps() {
        let s = load_edge_stream("0\t1\t5\n1\t2\t6".as_bytes()).unwrap();
        assert_eq!(s.edges.len(), 2);
        assert_eq!(s.num_nodes, 3);
        let s = load_edge_stream("40\t7\t1\n7\t9\t2\n".as_bytes()).unwrap();
        assert_eq!(s.edges[0], TimedEdge { src: 0, dst: 1, ts: 1 });
        assert_eq!(s.edges[1], TimedEdge { src: 1, dst: 2, ts: 2 });
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match load_edge_stream("a\tb\tc".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match load_edge_stream("0\t1\t2\n0\t1".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_error() {
        assert!(matches!(load_edge_stream("".as_bytes()), Err(Error::EmptyInput(_))));
        assert!(matches!(load_edge_stream("# only a comment\n\n".as_bytes()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn format_names() {
        assert_eq!("tsv".parse::<DataFormat>().unwrap(), DataFormat::Tsv);
        assert_eq!(DataFormat::Snapshots.to_string(), "snapshots");
        assert!("csv".parse::<DataFormat>().is_err());
    }
}
