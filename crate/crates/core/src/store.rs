//! Per-node sparse weight vectors `θ_z` over global node ids.
//!
//! On disk (`SDT1`): `n: u64`, then per node `nnz: u64` followed by `nnz`
//! pairs of `(node id: u64, weight: f64)` with ids ascending. Nodes that were
//! never decomposed are written with `nnz = 0`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, Reader, Writer};
use crate::matrix::DenseMatrix;

const STORE_MAGIC: &[u8; 4] = b"SDT1";

/// `(node id, weight)` pairs, ids ascending.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeightStore {
    rows: Vec<Option<SparseRow>>,
}

impl SparseWeightStore {
    /// Store for `n` nodes with nothing decomposed yet.
    pub fn new(n: usize) -> Self {
        Self {
            rows: vec![None; n],
        }
    }

    /// Every node present with the given rows.
    pub fn from_rows(rows: Vec<SparseRow>) -> Self {
        Self {
            rows: rows.into_iter().map(Some).collect(),
        }
    }

    /// `θ_z = e_z` for every node.
    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|z| vec![(z, 1.0)]).collect())
    }

    /// Rows of a dense `n × n` matrix; zeros are skipped.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        Self::from_rows(
            (0..m.rows())
                .map(|z| {
                    m.row(z)
                        .iter()
                        .enumerate()
                        .filter(|(_, &w)| w != 0.0)
                        .map(|(i, &w)| (i, w))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, z: usize) -> Option<&[(usize, f64)]> {
        self.rows.get(z).and_then(|r| r.as_deref())
    }

    /// Row `z`, treating undecomposed nodes as all-zero.
    pub fn row_or_empty(&self, z: usize) -> &[(usize, f64)] {
        self.get(z).unwrap_or(&[])
    }

    pub fn set(&mut self, z: usize, mut row: SparseRow) {
        row.sort_unstable_by_key(|e| e.0);
        self.rows[z] = Some(row);
    }

    pub fn is_decomposed(&self, z: usize) -> bool {
        self.get(z).is_some()
    }

    pub fn nnz(&self, z: usize) -> usize {
        self.row_or_empty(z).len()
    }

    pub fn total_nnz(&self) -> usize {
        (0..self.num_nodes()).map(|z| self.nnz(z)).sum()
    }

    /// Mean and population standard deviation of nnz over all nodes.
    pub fn nnz_stats(&self) -> (f64, f64) {
        let n = self.num_nodes();
        if n == 0 {
            return (0.0, 0.0);
        }
        let counts: Vec<f64> = (0..n).map(|z| self.nnz(z) as f64).collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }

    /// `Σ_z ‖θ_z‖₁`.
    pub fn l1(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .flat_map(|r| r.iter().map(|e| e.1.abs()))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[(usize, f64)])> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(z, r)| r.as_deref().map(|r| (z, r)))
    }

    /// Dense `n × n` matrix whose row `z` is `θ_z`.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.num_nodes();
        let mut m = DenseMatrix::zeros(n, n);
        for (z, row) in self.iter() {
            for &(i, w) in row {
                m[(z, i)] = w;
            }
        }
        m
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(STORE_MAGIC);
        w.usize(self.num_nodes());
        for z in 0..self.num_nodes() {
            let row = self.row_or_empty(z);
            w.usize(row.len());
            for &(i, v) in row {
                w.usize(i);
                w.f64(v);
            }
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, STORE_MAGIC)?;
        let n = r.usize()?;
        let mut rows = Vec::with_capacity(n.min(1 << 24));
        for z in 0..n {
            let nnz = r.usize()?;
            if nnz.saturating_mul(16) > r.remaining() {
                return Err(Error::Format(format!("truncated row {z}")));
            }
            let mut row = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let i = r.usize()?;
                let v = r.f64()?;
                if i >= n {
                    return Err(Error::Format(format!("row {z}: id {i} out of range")));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: z, col: i });
                }
                row.push((i, v));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Format(format!("row {z}: ids not ascending")));
            }
            rows.push(Some(row));
        }
        r.finish()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}
