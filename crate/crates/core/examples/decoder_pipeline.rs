//! End-to-end node classification: decompose GNN embeddings, train a
//! softmax decoder on the decomposed embeddings, and classify nodes through
//! the serving bundle.
//!
//! ```text
//! cargo run --release --example decoder_pipeline
//! ```

use sparse_decomp::candidates::CandidateConfig;
use sparse_decomp::generate::{barabasi_albert, gaussian_matrix};
use sparse_decomp::serving::ServingBundle;
use sparse_decomp::targets::{decoder_fit, sage_forward, DecoderConfig, SageParams};
use sparse_decomp::trainer::{fit, reconstruct, TrainConfig};

fn main() -> sparse_decomp::Result<()> {
    let n = 300;
    let g = barabasi_albert(n, 2, 21);
    let x = gaussian_matrix(n, 10, 22);
    let omega = sage_forward(&g, &x, &SageParams::init(&[10, 12, 6], 23)?)?;
    // labels from the sign of the first teacher coordinate
    let labels: Vec<usize> = (0..n).map(|z| (omega.row(z)[0] > 0.0) as usize).collect();

    let cfg = TrainConfig {
        lambda1: 1e-3,
        lambda2: 1e-4,
        max_active: 10,
        batch_size: 64,
        outer_iters: 60,
        phi_steps: 3,
        lr: 3e-4,
        backtracking: true,
        candidates: CandidateConfig {
            k1: 2,
            ..Default::default()
        },
        hidden: Some(vec![24]),
        seed: 4,
        ..Default::default()
    };
    let d = fit(&g, &x, &omega, &cfg)?;
    let decomposed = reconstruct(&d.params, &x, &d.store)?;

    let train: Vec<usize> = (0..n).filter(|z| z % 5 != 0).collect();
    let test: Vec<usize> = (0..n).filter(|z| z % 5 == 0).collect();
    let dec_cfg = DecoderConfig {
        hidden: vec![16],
        epochs: 400,
        lr: 0.1,
        noise_sigma: 0.05,
        ..Default::default()
    };
    let dec = decoder_fit(&decomposed, &labels, &train, &dec_cfg)?;

    let bundle = ServingBundle::new(d.params, d.store, Some(dec), &x)?;
    let mut correct = 0;
    for &z in &test {
        correct += (bundle.infer_predict(z)?.class == labels[z]) as usize;
    }
    println!("held-out accuracy {correct}/{} with mean nnz {:.2}", test.len(), d.report.mean_nnz);
    Ok(())
}
