//! Directed retweet graph with dense node indices.
//!
//! An edge `u -> v` means user `u` retweeted user `v`. Both adjacency
//! directions are stored in compressed sparse row form with sorted,
//! duplicate-free neighbor lists, so `in_neighbors` is always the exact
//! transpose of `out_neighbors`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Compressed adjacency for one direction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    /// `edges` must be sorted and deduplicated by (row, col).
    fn from_sorted(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(r, _) in edges {
            offsets[r as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = edges.iter().map(|&(_, c)| c).collect();
        Csr { offsets, targets }
    }

    fn row(&self, u: usize) -> &[u32] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetweetGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    out: Csr,
    inc: Csr,
}

impl Default for RetweetGraph {
    fn default() -> Self {
        GraphBuilder::new().build()
    }
}

impl RetweetGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.targets.len()
    }

    pub fn out_neighbors(&self, u: usize) -> &[u32] {
        self.out.row(u)
    }

    pub fn in_neighbors(&self, u: usize) -> &[u32] {
        self.inc.row(u)
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.out.offsets[u + 1] - self.out.offsets[u]
    }

    pub fn in_degree(&self, u: usize) -> usize {
        self.inc.offsets[u + 1] - self.inc.offsets[u]
    }

    pub fn id(&self, u: usize) -> &str {
        &self.ids[u]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out_neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// All edges in (source, target) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count())
            .flat_map(move |u| self.out_neighbors(u).iter().map(move |&v| (u, v as usize)))
    }

    /// Transposed graph with the same dense index assignment.
    pub fn invert(&self) -> RetweetGraph {
        RetweetGraph {
            ids: self.ids.clone(),
            index: self.index.clone(),
            out: self.inc.clone(),
            inc: self.out.clone(),
        }
    }

    /// Sorted union of in- and out-neighbors of `u`.
    pub fn undirected_neighbors(&self, u: usize) -> Vec<u32> {
        let (a, b) = (self.out_neighbors(u), self.in_neighbors(u));
        let mut merged = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let next = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    y
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            merged.push(next);
        }
        merged
    }

    /// Returns a copy with `extra` ids appended as isolated nodes; ids
    /// already present keep their index.
    pub fn with_nodes<'a>(&self, extra: impl IntoIterator<Item = &'a str>) -> RetweetGraph {
        let mut builder = GraphBuilder::from_graph(self);
        for id in extra {
            builder.node(id);
        }
        builder.build()
    }
}

/// Incremental constructor; node indices follow first appearance.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(u32, u32)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graph(g: &RetweetGraph) -> Self {
        GraphBuilder {
            ids: g.ids.clone(),
            index: g.index.clone(),
            edges: g.edges().map(|(u, v)| (u as u32, v as u32)).collect(),
        }
    }

    pub fn node(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    /// Adds `src -> dst`. Self-loops are ignored and reported as `false`.
    pub fn edge(&mut self, src: &str, dst: &str) -> bool {
        let u = self.node(src);
        let v = self.node(dst);
        self.edge_indices(u, v)
    }

    pub fn edge_indices(&mut self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        self.edges.push((u as u32, v as u32));
        true
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn build(mut self) -> RetweetGraph {
        let n = self.ids.len();
        self.edges.sort_unstable();
        self.edges.dedup();
        let out = Csr::from_sorted(n, &self.edges);
        let mut rev: Vec<(u32, u32)> = self.edges.iter().map(|&(u, v)| (v, u)).collect();
        rev.sort_unstable();
        let inc = Csr::from_sorted(n, &rev);
        RetweetGraph {
            ids: self.ids,
            index: self.index,
            out,
            inc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub lines: usize,
    pub duplicates: usize,
    pub self_loops: usize,
    pub nodes: usize,
    pub edges: usize,
}

pub fn ingest_edges(path: impl AsRef<Path>) -> Result<(RetweetGraph, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_edges(BufReader::new(file), path)
}

/// Parses `source<TAB>target` lines. `#` starts a comment line.
pub fn read_edges(reader: impl BufRead, path: &Path) -> Result<(RetweetGraph, IngestReport)> {
    let mut builder = GraphBuilder::new();
    let mut report = IngestReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (src, dst) = match (fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(d), None) if !s.is_empty() && !d.is_empty() => (s, d),
            _ => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected `source<TAB>target`, got {line:?}"),
                ))
            }
        };
        report.lines += 1;
        if !builder.edge(src, dst) {
            report.self_loops += 1;
        }
    }
    if report.lines == 0 {
        return Err(Error::parse(path, 0, "edge file contains no edges"));
    }
    let g = builder.build();
    report.nodes = g.node_count();
    report.edges = g.edge_count();
    report.duplicates = report.lines - report.self_loops - report.edges;
    if report.self_loops > 0 {
        log::warn!(
            "{}: dropped {} self-loop lines",
            path.display(),
            report.self_loops
        );
    }
    Ok((g, report))
}

/// Writes every edge as `source<TAB>target`, in node order.
pub fn write_edges(w: &mut impl Write, g: &RetweetGraph) -> std::io::Result<()> {
    for (u, v) in g.edges() {
        writeln!(w, "{}\t{}", g.id(u), g.id(v))?;
    }
    Ok(())
}
