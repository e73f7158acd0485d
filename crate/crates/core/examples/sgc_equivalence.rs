//! A linear propagation model is exactly a sparse decomposition: its
//! embeddings are `Ã^K X W`, so `Θ = Ã^K` with a linear `φ = W` reproduces
//! them. The trainer is then asked to find such a decomposition itself.
//!
//! ```text
//! cargo run --release --example sgc_equivalence
//! ```

use sparse_decomp::candidates::CandidateConfig;
use sparse_decomp::generate::{erdos_renyi, gaussian_matrix};
use sparse_decomp::normalized_adjacency;
use sparse_decomp::sampler::exact_power_row;
use sparse_decomp::store::SparseWeightStore;
use sparse_decomp::targets::sgc_target;
use sparse_decomp::trainer::{fit, objective, TrainConfig};
use sparse_decomp::transform::TransformParams;

fn main() -> sparse_decomp::Result<()> {
    let g = erdos_renyi(150, 0.04, 8);
    let na = normalized_adjacency(&g);
    let x = gaussian_matrix(150, 8, 1);
    let w = gaussian_matrix(8, 4, 2);

    for hops in 1..=3 {
        let omega = sgc_target(&na, &x, hops, &w)?;
        let theta = SparseWeightStore::from_rows((0..150).map(|z| exact_power_row(&na, z, hops)).collect());
        let phi = TransformParams::linear(w.clone(), vec![0.0; 4])?;
        let data = objective(&x, &omega, &phi, &theta, 0.0, 0.0)?;
        let (mean_nnz, _) = theta.nnz_stats();
        println!("K={hops}: exact decomposition, data term {data:.2e}, mean nnz {mean_nnz:.1}");
    }

    let omega = sgc_target(&na, &x, 2, &w)?;
    let cfg = TrainConfig {
        lambda1: 1e-4,
        lambda2: 0.0,
        max_active: 16,
        batch_size: 50,
        outer_iters: 60,
        phi_steps: 5,
        lr: 1e-3,
        backtracking: true,
        candidates: CandidateConfig {
            k1: 2,
            ..Default::default()
        },
        hidden: Some(vec![]),
        seed: 3,
        ..Default::default()
    };
    let d = fit(&g, &x, &omega, &cfg)?;
    let energy: f64 = 0.5 * omega.as_slice().iter().map(|v| v * v).sum::<f64>();
    println!(
        "learned: objective {:.4} of {:.4}, mean nnz {:.2}",
        d.report.final_objective, energy, d.report.mean_nnz
    );
    Ok(())
}
