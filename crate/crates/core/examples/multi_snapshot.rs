//! One shared `Θ` fitted across several feature snapshots of the same graph.
//!
//! ```text
//! cargo run --release --example multi_snapshot
//! ```

use sparse_decomp::candidates::{build_all, CandidateConfig};
use sparse_decomp::generate::{erdos_renyi, gaussian_matrix, plant_theta};
use sparse_decomp::trainer::{fit_multi, reconstruct, Snapshot, TrainConfig};
use sparse_decomp::transform::TransformParams;
use sparse_decomp::DenseMatrix;

fn main() -> sparse_decomp::Result<()> {
    let g = erdos_renyi(100, 0.05, 7);
    let cand_cfg = CandidateConfig {
        k1: 1,
        ..Default::default()
    };
    let planted = plant_theta(&build_all(&g, &cand_cfg)?, 3, 0.5, 1.5, 11);

    let identity = TransformParams::identity(12);
    let features: Vec<DenseMatrix> = (0..4).map(|t| gaussian_matrix(100, 12, 100 + t)).collect();
    let targets: Vec<DenseMatrix> = features
        .iter()
        .map(|x| reconstruct(&identity, x, &planted))
        .collect::<sparse_decomp::Result<_>>()?;
    let snapshots: Vec<Snapshot<'_>> = features
        .iter()
        .zip(&targets)
        .map(|(x, t)| Snapshot { features: x, targets: t })
        .collect();

    let cfg = TrainConfig {
        lambda1: 1e-3,
        lambda2: 0.0,
        max_active: 8,
        batch_size: 100,
        outer_iters: 80,
        phi_steps: 3,
        lr: 2e-4,
        candidates: cand_cfg,
        hidden: Some(vec![]),
        seed: 1,
        ..Default::default()
    };
    let d = fit_multi(&g, &snapshots, &cfg)?;
    let mut hits = 0;
    let mut total = 0;
    for z in 0..100 {
        let want: Vec<usize> = planted.row_or_empty(z).iter().map(|e| e.0).collect();
        hits += d.store.row_or_empty(z).iter().filter(|e| want.contains(&e.0)).count();
        total += want.len();
    }
    println!(
        "{} snapshots: objective {:.5}, planted support recovered {hits}/{total}, mean nnz {:.2}",
        snapshots.len(),
        d.report.final_objective,
        d.report.mean_nnz
    );
    Ok(())
}
