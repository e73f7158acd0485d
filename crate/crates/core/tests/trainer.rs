mod common;

use common::sq_norm;
use sparse_decomp::candidates::CandidateConfig;
use sparse_decomp::generate::{erdos_renyi, gaussian_matrix};
use sparse_decomp::sampler::{ProbMode, WalkConfig};
use sparse_decomp::store::SparseWeightStore;
use sparse_decomp::trainer::{
    equalize, fit, fit_from, fit_multi, fit_observed, objective, reconstruct, ActiveSchedule, EqualizeRule, Snapshot,
    TrainConfig, TrainEvent, WarmupConfig,
};
use sparse_decomp::transform::{forward, Activation, TransformParams};
use sparse_decomp::DenseMatrix;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        lambda1: 1e-2,
        lambda2: 1e-4,
        max_active: 4,
        batch_size: 10,
        outer_iters: 5,
        phi_steps: 2,
        lr: 1e-3,
        candidates: CandidateConfig {
            k1: 1,
            ..Default::default()
        },
        hidden: Some(vec![6]),
        seed: 3,
        ..Default::default()
    }
}

fn dense_objective(
    x: &DenseMatrix,
    omega: &DenseMatrix,
    params: &TransformParams,
    store: &SparseWeightStore,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let theta = store.to_dense();
    let phi: Vec<Vec<f64>> = (0..x.rows()).map(|i| forward(params, x.row(i)).unwrap()).collect();
    let mut data = 0.0;
    for z in 0..omega.rows() {
        let mut pred = vec![0.0; omega.cols()];
        for (i, phi_i) in phi.iter().enumerate() {
            let t = theta.row(z)[i];
            for (p, v) in pred.iter_mut().zip(phi_i) {
                *p += t * v;
            }
        }
        data += 0.5 * pred.iter().zip(omega.row(z)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let l1: f64 = theta.as_slice().iter().map(|v| v.abs()).sum();
    let w: f64 = params.layers.iter().map(|l| sq_norm(&l.weights)).sum();
    data + lambda1 * l1 + lambda2 * w
}

#[test]
fn exact_representation_is_recovered() {
    let g = erdos_renyi(30, 0.1, 4);
    let x = gaussian_matrix(30, 4, 5);
    let cfg = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        hidden: Some(vec![]),
        outer_iters: 3,
        lr: 0.0,
        ..small_cfg()
    };
    let d = fit_from(&g, &x, &x, &cfg, TransformParams::identity(4)).unwrap();
    assert!(d.report.final_objective <= 1e-6, "{}", d.report.final_objective);
    assert!(d.report.mean_nnz <= 2.0, "{}", d.report.mean_nnz);
}

#[test]
fn zero_iterations_keep_init_and_respect_cap() {
    let g = erdos_renyi(25, 0.2, 1);
    let x = gaussian_matrix(25, 3, 2);
    let omega = gaussian_matrix(25, 2, 3);
    let cfg = TrainConfig {
        outer_iters: 0,
        ..small_cfg()
    };
    let init = TransformParams::init(&[3, 6, 2], Activation::Relu, 9).unwrap();
    let d = fit_from(&g, &x, &omega, &cfg, init.clone()).unwrap();
    assert_eq!(d.params, init);
    assert!(d.report.iterations.is_empty());
    for z in 0..25 {
        assert!(d.store.nnz(z) <= cfg.max_active);
    }
}

#[test]
fn duplicated_snapshot_doubles_the_data_term() {
    let g = erdos_renyi(30, 0.15, 6);
    let x = gaussian_matrix(30, 4, 7);
    let omega = gaussian_matrix(30, 3, 8);
    let cfg = small_cfg();
    let s = Snapshot { features: &x, targets: &omega };
    let d = fit_multi(&g, &[s, s], &cfg).unwrap();
    let data = objective(&x, &omega, &d.params, &d.store, 0.0, 0.0).unwrap();
    let want = 2.0 * data + cfg.lambda1 * d.store.l1() + cfg.lambda2 * d.params.weight_norm_sq();
    assert!((d.report.final_objective - want).abs() <= 1e-9 * want.max(1.0));
}

#[test]
fn zero_targets_give_empty_rows() {
    let g = erdos_renyi(20, 0.2, 2);
    let x = gaussian_matrix(20, 3, 3);
    let omega = DenseMatrix::zeros(20, 2);
    let d = fit(&g, &x, &omega, &small_cfg()).unwrap();
    assert_eq!(d.store.total_nnz(), 0);
    assert!(d.report.final_objective <= small_cfg().lambda2 * d.params.weight_norm_sq() + 1e-12);
}

#[test]
fn equalize_by_hand() {
    let store = SparseWeightStore::from_rows(vec![vec![(0, 0.2), (1, 0.6)], vec![], vec![(2, 3.0)]]);
    let mass = equalize(&store, EqualizeRule::PreserveMass);
    assert_eq!(mass.row_or_empty(0), &[(0, 0.4), (1, 0.4)]);
    assert!(mass.row_or_empty(1).is_empty());
    assert_eq!(mass.row_or_empty(2), &[(2, 3.0)]);
    let unit = equalize(&store, EqualizeRule::UnitMass);
    assert_eq!(unit.row_or_empty(0), &[(0, 0.5), (1, 0.5)]);
    assert_eq!(unit.row_or_empty(2), &[(2, 1.0)]);
}

#[test]
fn equalizing_a_fit_never_lowers_its_data_term() {
    let g = erdos_renyi(40, 0.12, 3);
    let x = gaussian_matrix(40, 5, 4);
    let omega = gaussian_matrix(40, 3, 5);
    let cfg = TrainConfig {
        lambda1: 0.0,
        ..small_cfg()
    };
    let d = fit(&g, &x, &omega, &cfg).unwrap();
    let before = objective(&x, &omega, &d.params, &d.store, 0.0, 0.0).unwrap();
    let eq = equalize(&d.store, EqualizeRule::PreserveMass);
    let after = objective(&x, &omega, &d.params, &eq, 0.0, 0.0).unwrap();
    assert!(after >= before - 1e-9 * before.max(1.0));
}

#[test]
fn empty_store_and_zero_weights() {
    let x = gaussian_matrix(6, 2, 1);
    let omega = gaussian_matrix(6, 2, 2);
    let mut zero = TransformParams::init(&[2, 3, 2], Activation::Relu, 1).unwrap();
    let len = zero.num_params();
    zero.set_flat(&vec![0.0; len]).unwrap();
    let store = SparseWeightStore::new(6);
    let got = objective(&x, &omega, &zero, &store, 0.3, 0.7).unwrap();
    assert!((got - 0.5 * sq_norm(&omega)).abs() < 1e-12);
}

#[test]
fn objective_matches_dense_oracle() {
    let g = erdos_renyi(20, 0.2, 9);
    let x = gaussian_matrix(20, 4, 10);
    let omega = gaussian_matrix(20, 3, 11);
    let cfg = small_cfg();
    let d = fit(&g, &x, &omega, &cfg).unwrap();
    let want = dense_objective(&x, &omega, &d.params, &d.store, cfg.lambda1, cfg.lambda2);
    let got = objective(&x, &omega, &d.params, &d.store, cfg.lambda1, cfg.lambda2).unwrap();
    assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
    assert!((d.report.final_objective - want).abs() <= 1e-9 * want.max(1.0));

    let recon = reconstruct(&d.params, &x, &d.store).unwrap();
    let theta = d.store.to_dense();
    for z in 0..20 {
        let mut row = vec![0.0; 3];
        for i in 0..20 {
            for (r, v) in row.iter_mut().zip(forward(&d.params, x.row(i)).unwrap()) {
                *r += theta.row(z)[i] * v;
            }
        }
        for (a, b) in recon.row(z).iter().zip(&row) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn supports_stay_feasible_under_a_schedule() {
    let g = erdos_renyi(50, 0.1, 12);
    let x = gaussian_matrix(50, 6, 13);
    let omega = gaussian_matrix(50, 4, 14);
    let cfg = TrainConfig {
        max_active: 6,
        outer_iters: 6,
        lambda1: 1e-4,
        schedule: Some(ActiveSchedule {
            start: 6,
            decay_every: 2,
            decay_by: 2,
            floor: 2,
        }),
        ..small_cfg()
    };
    let mut events = Vec::new();
    let d = fit_observed(&g, &[Snapshot { features: &x, targets: &omega }], &cfg, None, &mut |e| {
        events.push(e.clone())
    })
    .unwrap();
    let mut solves = 0;
    let mut current = vec![0usize; 50];
    for e in &events {
        if let TrainEvent::ThetaSolved { iteration, node, nnz, new_objective, previous_objective, .. } = e {
            solves += 1;
            let cap = cfg.effective_max_active(iteration.unwrap_or(cfg.outer_iters));
            assert!(*nnz <= cap, "{nnz} > {cap} at {iteration:?}");
            // a row that still fits under the cap is never replaced by a worse one
            if current[*node] <= cap {
                assert!(*new_objective <= previous_objective + 1e-9 * previous_objective.max(1.0));
            }
            current[*node] = *nnz;
        }
    }
    assert!(solves > 0);
    for (z, row) in d.store.iter() {
        assert!(row.len() <= 2);
        let cand = d.candidates.get(z);
        assert!(row.iter().all(|e| cand.contains(e.0) && e.1 > 0.0));
    }
    let caps: Vec<usize> = d.report.iterations.iter().map(|r| r.max_active).collect();
    assert_eq!(caps, vec![6, 6, 4, 4, 2, 2]);
}

#[test]
fn fixed_seed_is_reproducible() {
    let g = erdos_renyi(40, 0.1, 15);
    let x = gaussian_matrix(40, 4, 16);
    let omega = gaussian_matrix(40, 3, 17);
    let cfg = TrainConfig {
        train_subset_fraction: 0.6,
        ..small_cfg()
    };
    let a = fit(&g, &x, &omega, &cfg).unwrap();
    let b = fit(&g, &x, &omega, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.store, b.store);
    assert_eq!(a.report.final_objective.to_bits(), b.report.final_objective.to_bits());
}

#[test]
fn report_lines_format() {
    let g = erdos_renyi(20, 0.2, 1);
    let x = gaussian_matrix(20, 3, 2);
    let omega = gaussian_matrix(20, 2, 3);
    let d = fit(&g, &x, &omega, &small_cfg()).unwrap();
    let text = d.report.to_lines();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for (k, line) in lines.iter().enumerate() {
        let keys: Vec<&str> = line.split(' ').map(|f| f.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["iter", "obj", "mean_nnz", "phase_theta_ms", "phase_phi_ms"]);
        assert!(line.starts_with(&format!("iter={k} ")));
        for f in line.split(' ').skip(1) {
            assert!(f.split('=').nth(1).unwrap().parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn shape_and_config_errors() {
    let g = erdos_renyi(20, 0.2, 1);
    let x = gaussian_matrix(20, 3, 2);
    assert!(fit(&g, &x, &gaussian_matrix(19, 2, 3), &small_cfg()).is_err());
    assert!(fit(&g, &gaussian_matrix(21, 3, 2), &gaussian_matrix(20, 2, 3), &small_cfg()).is_err());
    let bad = TrainConfig {
        lambda1: -1.0,
        ..small_cfg()
    };
    assert!(fit(&g, &x, &gaussian_matrix(20, 2, 3), &bad).is_err());
    let wrong_init = TransformParams::identity(5);
    assert!(fit_from(&g, &x, &gaussian_matrix(20, 2, 3), &small_cfg(), wrong_init).is_err());
}

#[test]
fn warm_start_path_runs_and_is_deterministic() {
    let g = erdos_renyi(40, 0.12, 21);
    let x = gaussian_matrix(40, 5, 22);
    let omega = gaussian_matrix(40, 3, 23);
    let cfg = TrainConfig {
        warmup: Some(WarmupConfig {
            walk: WalkConfig::uniform(2, 4, ProbMode::VarianceOptimal, 5),
            steps: 10,
        }),
        ..small_cfg()
    };
    let a = fit(&g, &x, &omega, &cfg).unwrap();
    let b = fit(&g, &x, &omega, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.store, b.store);
    assert!(a.report.final_objective.is_finite());
    let cold = fit(&g, &x, &omega, &small_cfg()).unwrap();
    assert_ne!(a.params, cold.params);
}
