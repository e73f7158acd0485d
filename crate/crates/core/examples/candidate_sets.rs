//! Candidate sets: a full k1-hop ball plus sampled extra hops.
//!
//! ```text
//! cargo run --release --example candidate_sets
//! ```

use sparse_decomp::candidates::{build_all, CandidateConfig};
use sparse_decomp::generate::barabasi_albert;

fn main() -> sparse_decomp::Result<()> {
    let g = barabasi_albert(2000, 3, 7);
    println!("graph: {} nodes, {} edges", g.num_nodes(), g.num_edges());

    for (k1, k2, fanouts) in [(1, 0, vec![]), (2, 0, vec![]), (1, 1, vec![5]), (1, 2, vec![5, 3])] {
        let cfg = CandidateConfig {
            k1,
            k2,
            fanouts: fanouts.clone(),
            include_self: true,
            rng_seed: 0,
        };
        let t = std::time::Instant::now();
        let sets = build_all(&g, &cfg)?;
        let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        println!(
            "k1={k1} k2={k2} fanouts={fanouts:?}: mean |C|={mean:.1} max |C|={} memory={} KiB ({:.1} ms)",
            sizes.iter().max().unwrap(),
            sets.memory_bytes() / 1024,
            t.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
