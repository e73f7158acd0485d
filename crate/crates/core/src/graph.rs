//! Undirected graphs in CSR form and their symmetric-normalized adjacency.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, Reader, Writer};

const GRAPH_MAGIC: &[u8; 4] = b"SDG1";

/// Undirected simple graph. Each edge is stored as two arcs; rows are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-loops are dropped and
    /// duplicate edges (in either orientation) collapse to one.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Shape(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Self::from_adjacency(adj))
    }

    fn from_adjacency(mut adj: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(adj.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Self {
            row_offsets,
            col_indices,
        }
    }

    /// Assembles a graph from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(row_offsets: Vec<usize>, col_indices: Vec<usize>) -> Result<Self> {
        let g = Self {
            row_offsets,
            col_indices,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.row_offsets.first() != Some(&0) {
            return bad("row_offsets must start at 0".into());
        }
        if *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return bad("row_offsets must end at the arc count".into());
        }
        let n = self.num_nodes();
        for u in 0..n {
            if self.row_offsets[u] > self.row_offsets[u + 1] {
                return bad(format!("row_offsets decrease at row {u}"));
            }
            let row = self.neighbors(u);
            for (k, &v) in row.iter().enumerate() {
                if v >= n {
                    return bad(format!("arc ({u}, {v}) out of range"));
                }
                if v == u {
                    return bad(format!("self-loop at {u}"));
                }
                if k > 0 && row[k - 1] >= v {
                    return bad(format!("row {u} not strictly sorted"));
                }
                if self.neighbors(v).binary_search(&u).is_err() {
                    return bad(format!("arc ({u}, {v}) has no reverse"));
                }
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Number of undirected edges `m`.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn num_arcs(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Sorted neighbours of `z`, excluding `z` itself.
    #[inline]
    pub fn neighbors(&self, z: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[z]..self.row_offsets[z + 1]]
    }

    #[inline]
    pub fn degree(&self, z: usize) -> usize {
        self.row_offsets[z + 1] - self.row_offsets[z]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|z| self.degree(z)).collect()
    }

    /// Hop distances from `z`, `None` for nodes farther than `max_hop`.
    pub fn hop_distances(&self, z: usize, max_hop: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes()];
        dist[z] = Some(0);
        let mut queue = VecDeque::from([z]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            if du == max_hop {
                continue;
            }
            for &v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Sorted nodes within `hops` of `z`, including `z`.
    pub fn ball(&self, z: usize, hops: usize) -> Vec<usize> {
        self.hop_distances(z, hops)
            .iter()
            .enumerate()
            .filter_map(|(v, d)| d.map(|_| v))
            .collect()
    }

    /// Returns the graph with node `v` renamed to `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Shape("permutation length differs from node count".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for u in 0..n {
            adj[perm[u]] = self.neighbors(u).iter().map(|&v| perm[v]).collect();
        }
        Ok(Self::from_adjacency(adj))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(GRAPH_MAGIC);
        w.usize(self.num_nodes());
        w.usize(self.num_arcs());
        for &o in &self.row_offsets {
            w.usize(o);
        }
        for &c in &self.col_indices {
            w.usize(c);
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, GRAPH_MAGIC)?;
        let n = r.usize()?;
        let arcs = r.usize()?;
        let expected = n
            .checked_add(1)
            .and_then(|x| x.checked_add(arcs))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| Error::Format("graph header overflows".into()))?;
        if r.remaining() != expected {
            return Err(Error::Format(format!(
                "graph header expects {expected} payload bytes, found {}",
                r.remaining()
            )));
        }
        let row_offsets = (0..=n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let col_indices = (0..arcs).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_csr(row_offsets, col_indices)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}

/// Parses a whitespace-separated `u v` edge list. Lines starting with `#`
/// and blank lines are skipped.
pub fn parse_edge_list(text: &str, num_nodes: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next_id = |what: &str| -> Result<usize> {
            let tok = parts.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing {what} node id"),
            })?;
            let id: usize = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid node id {tok:?}"),
            })?;
            if id >= num_nodes {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("node id {id} out of range for {num_nodes} nodes"),
                });
            }
            Ok(id)
        };
        let u = next_id("source")?;
        let v = next_id("target")?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "expected exactly two ids".into(),
            });
        }
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "edge list is empty".into(),
        });
    }
    Graph::from_edges(num_nodes, &edges)
}

/// Reads an edge list file with `num_nodes` nodes.
pub fn load_graph(path: impl AsRef<Path>, num_nodes: usize) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, num_nodes)
}

/// `D^{-1/2} A D^{-1/2}` on the graph's CSR structure.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    graph: Graph,
    weights: Vec<f64>,
    row_norms: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(graph: &Graph) -> Self {
        let deg = graph.degrees();
        let mut weights = Vec::with_capacity(graph.num_arcs());
        for u in 0..graph.num_nodes() {
            for &v in graph.neighbors(u) {
                weights.push(1.0 / ((deg[u] * deg[v]) as f64).sqrt());
            }
        }
        let row_norms = (0..graph.num_nodes())
            .map(|u| {
                let r = graph.row_offsets[u]..graph.row_offsets[u + 1];
                weights[r].iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .collect();
        Self {
            graph: graph.clone(),
            weights,
            row_norms,
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// `(neighbour ids, weights)` of row `u`.
    #[inline]
    pub fn row(&self, u: usize) -> (&[usize], &[f64]) {
        let r = self.graph.row_offsets[u]..self.graph.row_offsets[u + 1];
        (&self.graph.col_indices[r.clone()], &self.weights[r])
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let (ids, ws) = self.row(u);
        ids.binary_search(&v).ok().map(|k| ws[k])
    }

    /// Euclidean norm of row `u`, computed once at construction.
    #[inline]
    pub fn row_norm(&self, u: usize) -> f64 {
        self.row_norms[u]
    }

    /// `out = Ã · x` for a dense n × c matrix stored row-major.
    pub fn multiply(&self, x: &crate::matrix::DenseMatrix) -> crate::matrix::DenseMatrix {
        let mut out = crate::matrix::DenseMatrix::zeros(x.rows(), x.cols());
        for u in 0..self.num_nodes() {
            let (ids, ws) = self.row(u);
            let o = out.row_mut(u);
            for (&v, &w) in ids.iter().zip(ws) {
                crate::matrix::axpy(w, x.row(v), o);
            }
        }
        out
    }
}

/// Symmetric-normalized adjacency of `g`.
pub fn normalized_adjacency(g: &Graph) -> NormalizedAdjacency {
    NormalizedAdjacency::new(g)
}
