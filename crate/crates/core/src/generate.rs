//! Seeded synthetic graphs, matrices and planted decompositions for tests,
//! examples and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::candidates::CandidateSets;
use crate::graph::Graph;
use crate::matrix::DenseMatrix;
use crate::rng;
use crate::store::SparseWeightStore;

/// `G(n, p)`.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Graph {
    let mut r = rng::stream(seed, &[0x4552]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("ids in range")
}

/// Preferential attachment: each new node links to `m` distinct existing
/// nodes chosen proportionally to degree. Degrees follow a power law.
pub fn barabasi_albert(n: usize, m: usize, seed: u64) -> Graph {
    let mut r = rng::stream(seed, &[0x4241]);
    let m = m.max(1);
    let mut edges = Vec::new();
    // endpoint list: each node appears once per incident edge
    let mut targets: Vec<usize> = Vec::new();
    let core = (m + 1).min(n);
    for u in 0..core {
        for v in (u + 1)..core {
            edges.push((u, v));
            targets.push(u);
            targets.push(v);
        }
    }
    for u in core..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m.min(u) {
            let v = targets[r.random_range(0..targets.len())];
            if !chosen.contains(&v) {
                chosen.push(v);
            }
        }
        for &v in &chosen {
            edges.push((u, v));
            targets.push(u);
            targets.push(v);
        }
    }
    Graph::from_edges(n, &edges).expect("ids in range")
}

/// Star with centre 0 and leaves `1..=leaves`, plus a path of `path_len`
/// further nodes hanging off leaf 1.
pub fn star_plus_path(leaves: usize, path_len: usize) -> Graph {
    let n = 1 + leaves + path_len;
    let mut edges: Vec<(usize, usize)> = (1..=leaves).map(|l| (0, l)).collect();
    let mut prev = 1;
    for k in 0..path_len {
        let v = leaves + 1 + k;
        edges.push((prev, v));
        prev = v;
    }
    Graph::from_edges(n, &edges).expect("ids in range")
}

/// Entries uniform in `[lo, hi)`.
pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DenseMatrix {
    let mut r = rng::stream(seed, &[0x554d]);
    DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

/// Standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut r = rng::stream(seed, &[0x474d]);
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

/// Plants `per_node` weights, uniform in `[lo, hi)`, on distinct random
/// members of each node's candidate set (all members if there are fewer).
pub fn plant_theta(candidates: &CandidateSets, per_node: usize, lo: f64, hi: f64, seed: u64) -> SparseWeightStore {
    let mut store = SparseWeightStore::new(candidates.len());
    for set in candidates.iter() {
        let mut r = rng::stream(seed, &[0x504c, set.center as u64]);
        let k = per_node.min(set.len());
        let picks = rand::seq::index::sample(&mut r, set.len(), k);
        let row = picks
            .into_iter()
            .map(|i| (set.members[i], r.random_range(lo..hi)))
            .collect();
        store.set(set.center, row);
    }
    store
}
