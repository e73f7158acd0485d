//! Writes a synthetic graph, features and GNN targets in the formats the
//! `sparse-decomp` command line tool reads.
//!
//! ```text
//! cargo run --release --example make_dataset -- data
//! cargo run --release -- train --graph data/edges.txt --features data/x.sdm \
//!     --targets data/omega.sdm --out-theta data/theta.sdt --out-phi data/phi.bin \
//!     --lambda1 1e-3 --lambda2 1e-4 --max-active 8 --k1 2 --k2 0 \
//!     --batch 64 --iters 50 --phi-steps 3 --lr 3e-4 --backtrack
//! cargo run --release -- infer --theta data/theta.sdt --phi data/phi.bin \
//!     --features data/x.sdm --node 0 --json
//! ```

use std::fmt::Write;
use std::path::PathBuf;

use sparse_decomp::generate::{barabasi_albert, gaussian_matrix};
use sparse_decomp::io::save_matrix;
use sparse_decomp::targets::{sage_forward, SageParams};
use sparse_decomp::Error;

fn main() -> sparse_decomp::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let n = 500;
    let g = barabasi_albert(n, 2, 1);
    let x = gaussian_matrix(n, 16, 2);
    let omega = sage_forward(&g, &x, &SageParams::init(&[16, 16, 8], 3)?)?;

    let mut edges = String::from("# undirected edge list, one pair per line\n");
    for u in 0..n {
        for &v in g.neighbors(u).iter().filter(|&&v| v > u) {
            writeln!(edges, "{u} {v}").unwrap();
        }
    }
    let path = dir.join("edges.txt");
    std::fs::write(&path, edges).map_err(|e| Error::io(&path, e))?;
    save_matrix(&x, dir.join("x.sdm"))?;
    save_matrix(&omega, dir.join("omega.sdm"))?;
    println!("wrote {} nodes, {} edges to {}", n, g.num_edges(), dir.display());
    Ok(())
}
