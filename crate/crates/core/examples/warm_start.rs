//! Sampled estimates of the normalized adjacency power, and training with
//! and without a warm start built from them.
//!
//! ```text
//! cargo run --release --example warm_start
//! ```

use sparse_decomp::candidates::CandidateConfig;
use sparse_decomp::generate::{barabasi_albert, gaussian_matrix};
use sparse_decomp::normalized_adjacency;
use sparse_decomp::sampler::{estimate_row, exact_power_row, ProbMode, WalkConfig};
use sparse_decomp::targets::{sage_forward, SageParams};
use sparse_decomp::trainer::{fit, TrainConfig, WarmupConfig};

fn main() -> sparse_decomp::Result<()> {
    let g = barabasi_albert(400, 2, 3);
    let na = normalized_adjacency(&g);

    let exact = exact_power_row(&na, 0, 2);
    for mode in [ProbMode::ProportionalToWeight, ProbMode::VarianceOptimal] {
        let mut err = 0.0;
        let runs = 200;
        for seed in 0..runs {
            let est = estimate_row(&na, 0, &WalkConfig::uniform(2, 8, mode, seed))?;
            err += exact.iter().map(|&(i, w)| (est.get(i) - w).powi(2)).sum::<f64>();
        }
        println!("{mode:?}: mean squared error of row 0 {:.5}", err / runs as f64);
    }

    let x = gaussian_matrix(400, 12, 4);
    let omega = sage_forward(&g, &x, &SageParams::init(&[12, 12, 6], 5)?)?;
    let base = TrainConfig {
        lambda1: 1e-3,
        lambda2: 1e-4,
        max_active: 10,
        batch_size: 64,
        outer_iters: 30,
        phi_steps: 3,
        lr: 3e-4,
        backtracking: true,
        candidates: CandidateConfig {
            k1: 2,
            ..Default::default()
        },
        hidden: Some(vec![24]),
        seed: 2,
        ..Default::default()
    };
    let warm = TrainConfig {
        warmup: Some(WarmupConfig {
            walk: WalkConfig::uniform(2, 32, ProbMode::VarianceOptimal, 2),
            steps: 200,
        }),
        ..base.clone()
    };
    for (name, cfg) in [("cold", &base), ("warm", &warm)] {
        let d = fit(&g, &x, &omega, cfg)?;
        let first = d.report.iterations.first().map_or(f64::NAN, |r| r.objective);
        println!(
            "{name}: objective after first iteration {first:.4}, final {:.4}, warm-up {:.1} ms",
            d.report.final_objective, d.report.warmup_ms
        );
    }
    Ok(())
}
