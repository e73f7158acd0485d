//! Positive Lasso on a single node's candidate design, across penalties.
//!
//! ```text
//! cargo run --release --example lasso_path
//! ```

use sparse_decomp::generate::{gaussian_matrix, uniform_matrix};
use sparse_decomp::lasso::{kkt_residual, solve_lars, solve_oracle, LassoProblem};

fn main() {
    // 12 candidates in 6 dimensions; the target mixes three of them
    let design = gaussian_matrix(12, 6, 1);
    let mix = uniform_matrix(1, 3, 0.5, 1.5, 2).into_vec();
    let mut target = vec![0.0; 6];
    for (k, &i) in [2usize, 5, 9].iter().enumerate() {
        for (t, x) in target.iter_mut().zip(design.row(i)) {
            *t += mix[k] * x;
        }
    }

    println!("{:>8} {:>4} {:>12} {:>12} {:>10}", "lambda", "nnz", "objective", "oracle", "kkt");
    for lambda in [2.0, 1.0, 0.5, 0.1, 0.01, 0.0] {
        let p = LassoProblem::new(design.clone(), target.clone(), lambda, 12);
        let s = solve_lars(&p);
        let o = solve_oracle(&p);
        println!(
            "{lambda:>8} {:>4} {:>12.6} {:>12.6} {:>10.2e}",
            s.nnz(),
            s.objective,
            o.objective,
            kkt_residual(&p, &s)
        );
    }

    let capped = LassoProblem::new(design, target, 0.0, 2);
    let s = solve_lars(&capped);
    println!("capped at 2: support {:?}", s.entries);
}
