//! Decomposes the embeddings of a two-layer mean-aggregator GNN into sparse
//! weighted sums of transformed features, then saves the result.
//!
//! ```text
//! cargo run --release --example decompose_sage -- [out_dir]
//! ```

use sparse_decomp::candidates::CandidateConfig;
use sparse_decomp::generate::{barabasi_albert, gaussian_matrix};
use sparse_decomp::serving::receptive_stats;
use sparse_decomp::targets::{sage_forward, SageParams};
use sparse_decomp::trainer::{fit, TrainConfig};

fn main() -> sparse_decomp::Result<()> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);

    let g = barabasi_albert(500, 2, 5);
    let x = gaussian_matrix(500, 16, 9);
    let omega = sage_forward(&g, &x, &SageParams::init(&[16, 16, 8], 13)?)?;

    let cfg = TrainConfig {
        lambda1: 1e-3,
        lambda2: 1e-4,
        max_active: 12,
        batch_size: 128,
        outer_iters: 100,
        phi_steps: 3,
        lr: 3e-4,
        backtracking: true,
        candidates: CandidateConfig {
            k1: 2,
            ..Default::default()
        },
        hidden: Some(vec![32]),
        seed: 1,
        ..Default::default()
    };
    let d = fit(&g, &x, &omega, &cfg)?;
    for r in d.report.iterations.iter().step_by(20) {
        println!("iter {:>3}  objective {:>10.4}  mean nnz {:.2}", r.iter, r.objective, r.mean_nnz);
    }
    let total: f64 = omega.as_slice().iter().map(|v| v * v).sum();
    println!(
        "final objective {:.4} (target energy {:.4}), lars fallbacks {}",
        d.report.final_objective,
        0.5 * total,
        d.report.lars_fallbacks
    );
    println!("{}", receptive_stats(&d.store, &g, 2)?);

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| sparse_decomp::Error::io(&dir, e))?;
        d.store.save(dir.join("theta.sdt"))?;
        d.params.save(dir.join("phi.bin"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
