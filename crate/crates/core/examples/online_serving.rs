//! Serving a decomposition: per-node inference that touches only the
//! support rows, live feature updates, and a latency benchmark.
//!
//! ```text
//! cargo run --release --example online_serving
//! ```

use sparse_decomp::generate::{erdos_renyi, gaussian_matrix};
use sparse_decomp::serving::{bench, ServingBundle};
use sparse_decomp::store::SparseWeightStore;
use sparse_decomp::transform::{Activation, TransformParams};

fn main() -> sparse_decomp::Result<()> {
    let n = 2000;
    let g = erdos_renyi(n, 0.01, 1);
    let x = gaussian_matrix(n, 64, 2);
    let phi = TransformParams::init(&[64, 128, 64], Activation::Relu, 3)?;

    for nnz in [1usize, 8, 32] {
        let mut store = SparseWeightStore::new(n);
        for z in 0..n {
            let mut row: Vec<(usize, f64)> = g.ball(z, 2).into_iter().take(nnz).map(|i| (i, 1.0)).collect();
            row.iter_mut().for_each(|e| e.1 /= nnz as f64);
            store.set(z, row);
        }
        let b = ServingBundle::new(phi.clone(), store, None, &x)?;
        let nodes: Vec<usize> = (0..200).map(|k| (k * 37) % n).collect();
        let r = bench(&b, &nodes, 2, 20)?;
        println!("nnz<={nnz:<3} {}", r.summary);
    }

    let mut store = SparseWeightStore::new(n);
    store.set(0, vec![(0, 0.5), (5, 0.5)]);
    let b = ServingBundle::new(phi, store, None, &x)?;
    let before = b.infer_embedding(0)?;
    b.features().update_row(7, &vec![1.0; 64])?;
    let unchanged = b.infer_embedding(0)? == before;
    b.features().update_row(5, &vec![1.0; 64])?;
    let changed = b.infer_embedding(0)? != before;
    println!("update outside support leaves output unchanged: {unchanged}; inside support changes it: {changed}");
    Ok(())
}
