use sparse_decomp::generate::{erdos_renyi, gaussian_matrix, star_plus_path};
use sparse_decomp::sampler::{
    build_theta0, estimate_row, estimate_row_with, exact_power_row, sampling_probs, warm_up_phi, ProbMode, WalkConfig,
};
use sparse_decomp::transform::{Activation, TransformParams};
use sparse_decomp::{normalized_adjacency, Graph};

use rand::SeedableRng;

const MODES: [ProbMode; 2] = [ProbMode::ProportionalToWeight, ProbMode::VarianceOptimal];

#[test]
fn probabilities_on_a_path_by_hand() {
    // 0 - 1 - 2 - 3; node 1 sees 0 (degree 1) and 2 (degree 2)
    let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let na = normalized_adjacency(&g);
    let w10 = 1.0 / 2f64.sqrt();
    let w12 = 0.5;
    let prop = sampling_probs(&na, 1, ProbMode::ProportionalToWeight).unwrap();
    assert!((prop[0] - w10 / (w10 + w12)).abs() < 1e-15);
    assert!((prop[1] - w12 / (w10 + w12)).abs() < 1e-15);

    let norm0 = w10;
    let norm2 = (0.25f64 + 0.5).sqrt();
    let (a, b) = (w10 * norm0, w12 * norm2);
    let opt = sampling_probs(&na, 1, ProbMode::VarianceOptimal).unwrap();
    assert!((opt[0] - a / (a + b)).abs() < 1e-15);
    assert!((opt[1] - b / (a + b)).abs() < 1e-15);
}

#[test]
fn probabilities_sum_to_one() {
    let g = erdos_renyi(60, 0.1, 3);
    let na = normalized_adjacency(&g);
    for z in (0..60).filter(|&z| g.degree(z) > 0) {
        for mode in MODES {
            let p = sampling_probs(&na, z, mode).unwrap();
            assert_eq!(p.len(), g.degree(z));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn isolated_node_is_an_error() {
    let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
    let na = normalized_adjacency(&g);
    assert!(sampling_probs(&na, 2, ProbMode::ProportionalToWeight).is_err());
    let cfg = WalkConfig::uniform(1, 2, ProbMode::ProportionalToWeight, 0);
    assert!(estimate_row(&na, 2, &cfg).is_err());
}

#[test]
fn triangle_two_hop_mean_within_three_standard_errors() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
    let na = normalized_adjacency(&g);
    // every weight is 1/2, so the squared adjacency has 1/2 on the diagonal
    // and 1/4 elsewhere
    let exact = [0.5, 0.25, 0.25];
    let runs = 200;
    for mode in MODES {
        let cfg = WalkConfig::uniform(2, 2, mode, 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let samples: Vec<[f64; 3]> = (0..runs)
            .map(|_| {
                let e = estimate_row_with(&na, 0, &cfg, &mut rng).unwrap();
                [e.get(0), e.get(1), e.get(2)]
            })
            .collect();
        for i in 0..3 {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / runs as f64;
            let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            let se = (var / runs as f64).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se.max(1e-12), "{mode:?} entry {i}: {mean} vs {}", exact[i]);
        }
    }
}

#[test]
fn exact_power_row_by_hand() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
    let na = normalized_adjacency(&g);
    let row = exact_power_row(&na, 0, 2);
    assert_eq!(row.len(), 3);
    assert!((row[0].1 - 0.5).abs() < 1e-15 && (row[1].1 - 0.25).abs() < 1e-15);
    assert_eq!(exact_power_row(&na, 1, 0), vec![(1, 1.0)]);
}

#[test]
fn estimates_stay_inside_the_k_hop_ball() {
    let g = star_plus_path(6, 5);
    let na = normalized_adjacency(&g);
    for k in 1..=3 {
        for z in 0..g.num_nodes() {
            for mode in MODES {
                let cfg = WalkConfig::uniform(k, 3, mode, z as u64);
                let est = estimate_row(&na, z, &cfg).unwrap();
                let ball = g.ball(z, k);
                let exact: Vec<usize> = exact_power_row(&na, z, k).iter().map(|e| e.0).collect();
                for &(i, w) in &est.entries {
                    assert!(ball.contains(&i));
                    assert!(exact.contains(&i));
                    assert!(w > 0.0);
                }
            }
        }
    }
}

#[test]
fn theta0_deterministic_truncated_and_mass_preserving() {
    let g = erdos_renyi(80, 0.08, 5);
    let na = normalized_adjacency(&g);
    let cfg = WalkConfig::uniform(2, 4, ProbMode::VarianceOptimal, 9);
    let nodes: Vec<usize> = (0..80).collect();
    let a = build_theta0(&na, &cfg, &nodes, 3).unwrap();
    assert_eq!(a, build_theta0(&na, &cfg, &nodes, 3).unwrap());
    for z in 0..80 {
        let row = a.row_or_empty(z);
        assert!(row.len() <= 3);
        if g.degree(z) == 0 {
            assert!(row.is_empty());
            continue;
        }
        let full = estimate_row(&na, z, &cfg).unwrap();
        let mass: f64 = row.iter().map(|e| e.1).sum();
        assert!((mass - full.l1()).abs() <= 1e-12 * full.l1().max(1.0));
        if full.entries.len() <= 3 {
            assert_eq!(row, full.entries.as_slice());
        } else {
            // the kept ids are the largest estimated weights
            let smallest_kept = row.iter().map(|e| full.get(e.0)).fold(f64::INFINITY, f64::min);
            let largest_dropped = full
                .entries
                .iter()
                .filter(|e| !row.iter().any(|r| r.0 == e.0))
                .map(|e| e.1)
                .fold(0.0, f64::max);
            assert!(smallest_kept >= largest_dropped);
        }
    }
}

#[test]
fn warm_up_behaviour() {
    let g = erdos_renyi(20, 0.25, 8);
    let na = normalized_adjacency(&g);
    let x = gaussian_matrix(20, 5, 1);
    let omega = gaussian_matrix(20, 3, 2);
    let nodes: Vec<usize> = (0..20).collect();
    let theta0 = build_theta0(&na, &WalkConfig::uniform(2, 4, ProbMode::VarianceOptimal, 1), &nodes, 6).unwrap();
    let p = TransformParams::init(&[5, 8, 3], Activation::Relu, 4).unwrap();

    let (same, losses) = warm_up_phi(&p, &x, &omega, &theta0, 0, 1e-3, 0.0, 20, 0).unwrap();
    assert_eq!(same, p);
    assert!(losses.is_empty());

    // one batch covers every node, so each step sees the same loss surface
    let (_, losses) = warm_up_phi(&p, &x, &omega, &theta0, 30, 1e-3, 0.0, 20, 0).unwrap();
    assert_eq!(losses.len(), 30);
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{losses:?}");
    assert!(losses[29] < losses[0]);
}
