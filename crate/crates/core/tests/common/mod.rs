#![allow(dead_code)]

use std::cell::Cell;

use sparse_decomp::store::SparseWeightStore;
use sparse_decomp::{DenseMatrix, FeatureSource};

/// Mean per-node F1 between the supports of `got` and `want`.
pub fn support_f1(got: &SparseWeightStore, want: &SparseWeightStore) -> f64 {
    let n = want.num_nodes();
    let mut total = 0.0;
    for z in 0..n {
        let a: Vec<usize> = got.row_or_empty(z).iter().map(|e| e.0).collect();
        let b: Vec<usize> = want.row_or_empty(z).iter().map(|e| e.0).collect();
        if a.is_empty() && b.is_empty() {
            total += 1.0;
            continue;
        }
        let hit = a.iter().filter(|i| b.contains(i)).count() as f64;
        if hit > 0.0 {
            let p = hit / a.len() as f64;
            let r = hit / b.len() as f64;
            total += 2.0 * p * r / (p + r);
        }
    }
    total / n as f64
}

pub fn sq_dist(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sq_norm(a: &DenseMatrix) -> f64 {
    a.as_slice().iter().map(|x| x * x).sum()
}

/// Feature source that records every row it hands out.
pub struct CountingSource<'a> {
    pub inner: &'a DenseMatrix,
    pub reads: Cell<usize>,
    pub rows: std::cell::RefCell<Vec<usize>>,
}

impl<'a> CountingSource<'a> {
    pub fn new(inner: &'a DenseMatrix) -> Self {
        Self {
            inner,
            reads: Cell::new(0),
            rows: Default::default(),
        }
    }

    pub fn reset(&self) {
        self.reads.set(0);
        self.rows.borrow_mut().clear();
    }
}

impl FeatureSource for CountingSource<'_> {
    fn num_rows(&self) -> usize {
        self.inner.rows()
    }

    fn dim(&self) -> usize {
        self.inner.cols()
    }

    fn read_row(&self, i: usize, out: &mut [f64]) {
        self.reads.set(self.reads.get() + 1);
        self.rows.borrow_mut().push(i);
        out.copy_from_slice(self.inner.row(i));
    }
}
