mod common;

use common::CountingSource;
use sparse_decomp::generate::gaussian_matrix;
use sparse_decomp::transform::{
    forward, forward_batch, gd_step, phase_phi_loss_grad, Activation, BatchItem, Layer, TransformParams,
};
use sparse_decomp::DenseMatrix;

fn hand_forward(params: &TransformParams, x: &[f64]) -> Vec<f64> {
    let last = params.layers.len() - 1;
    let mut h = x.to_vec();
    for (k, l) in params.layers.iter().enumerate() {
        let mut next = l.bias.clone();
        for (j, nj) in next.iter_mut().enumerate() {
            for (i, hi) in h.iter().enumerate() {
                *nj += hi * l.weights.row(i)[j];
            }
        }
        if k != last {
            next.iter_mut().for_each(|v| {
                *v = match params.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                    Activation::Identity => *v,
                }
            });
        }
        h = next;
    }
    h
}

fn weights_sq(params: &TransformParams) -> f64 {
    params.layers.iter().map(|l| l.weights.as_slice().iter().map(|w| w * w).sum::<f64>()).sum()
}

#[test]
fn identity_transform_returns_input() {
    assert_eq!(forward(&TransformParams::identity(2), &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
}

#[test]
fn relu_hidden_layer_by_hand() {
    let l1 = Layer {
        weights: DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
        bias: vec![0.0, 0.0],
    };
    let l2 = Layer {
        weights: DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
        bias: vec![0.0],
    };
    let p = TransformParams::new(vec![l1, l2], Activation::Relu).unwrap();
    assert_eq!(forward(&p, &[2.0]).unwrap(), vec![2.0]);
    assert_eq!(forward(&p, &[-3.0]).unwrap(), vec![3.0]);
}

#[test]
fn mismatched_layers_rejected() {
    let l1 = Layer {
        weights: DenseMatrix::zeros(2, 3),
        bias: vec![0.0; 3],
    };
    let l2 = Layer {
        weights: DenseMatrix::zeros(2, 1),
        bias: vec![0.0],
    };
    assert!(TransformParams::new(vec![l1, l2], Activation::Relu).is_err());
    assert!(forward(&TransformParams::identity(2), &[1.0]).is_err());
}

#[test]
fn forward_matches_hand_evaluation() {
    let x = gaussian_matrix(9, 5, 3);
    for act in [Activation::Relu, Activation::Tanh, Activation::Identity] {
        let p = TransformParams::init(&[5, 7, 6, 3], act, 11).unwrap();
        for i in 0..x.rows() {
            let got = forward(&p, x.row(i)).unwrap();
            for (a, b) in got.iter().zip(hand_forward(&p, x.row(i))) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn batch_equals_rowwise_bit_for_bit() {
    let x = gaussian_matrix(20, 4, 5);
    let p = TransformParams::init(&[4, 8, 3], Activation::Relu, 2).unwrap();
    let rows = [3, 17, 3, 0, 9];
    let batch = forward_batch(&p, &x, &rows).unwrap();
    for (k, &i) in rows.iter().enumerate() {
        let single = forward(&p, x.row(i)).unwrap();
        assert!(batch.row(k).iter().zip(&single).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let empty = forward_batch(&p, &x, &[]).unwrap();
    assert_eq!((empty.rows(), empty.cols()), (0, 3));
    assert!(forward_batch(&p, &x, &[20]).is_err());
}

#[test]
fn batch_reads_each_listed_row_once() {
    let x = gaussian_matrix(30, 4, 6);
    let p = TransformParams::init(&[4, 3], Activation::Relu, 1).unwrap();
    let src = CountingSource::new(&x);
    forward_batch(&p, &src, &[4, 9, 21]).unwrap();
    assert_eq!(src.reads.get(), 3);
    assert_eq!(*src.rows.borrow(), vec![4, 9, 21]);
}

#[test]
fn phase_phi_hand_examples() {
    let x = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let id = TransformParams::identity(2);
    let w = [(0usize, 1.0)];
    let item = BatchItem { weights: &w, target: &[1.0, 2.0] };
    let g = phase_phi_loss_grad(&id, &[item], &x, 0.0).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.flat().iter().all(|&v| v == 0.0));

    let off = BatchItem { weights: &w, target: &[0.0, 0.0] };
    assert_eq!(phase_phi_loss_grad(&id, &[off], &x, 0.0).unwrap().loss, 2.5);

    let g = phase_phi_loss_grad(&id, &[off], &x, 0.5).unwrap();
    assert!((g.loss - (2.5 + 0.5 * 2.0)).abs() < 1e-15);
}

#[test]
fn loss_matches_dense_recomputation() {
    let x = gaussian_matrix(25, 6, 7);
    let omega = gaussian_matrix(25, 4, 8);
    let p = TransformParams::init(&[6, 10, 4], Activation::Tanh, 3).unwrap();
    let rows: Vec<Vec<(usize, f64)>> = (0..8)
        .map(|z| vec![(z, 0.5), ((z * 7 + 3) % 25, 0.25), ((z * 11 + 1) % 25, 1.5)])
        .map(|mut r| {
            r.sort_by_key(|e| e.0);
            r.dedup_by_key(|e| e.0);
            r
        })
        .collect();
    let items: Vec<BatchItem<'_>> = rows
        .iter()
        .enumerate()
        .map(|(z, r)| BatchItem { weights: r, target: omega.row(z) })
        .collect();
    let lambda2 = 0.01;
    let got = phase_phi_loss_grad(&p, &items, &x, lambda2).unwrap().loss;

    let mut want = lambda2 * weights_sq(&p);
    for (z, r) in rows.iter().enumerate() {
        let mut pred = [0.0; 4];
        for &(i, w) in r {
            for (pk, v) in pred.iter_mut().zip(hand_forward(&p, x.row(i))) {
                *pk += w * v;
            }
        }
        want += 0.5 * pred.iter().zip(omega.row(z)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
}

#[test]
fn gradient_reads_only_support_rows() {
    let x = gaussian_matrix(40, 3, 9);
    let p = TransformParams::init(&[3, 5, 2], Activation::Relu, 4).unwrap();
    let a = [(2usize, 1.0), (7, 0.5)];
    let b = [(7usize, 0.3), (31, 0.2)];
    let items = [BatchItem { weights: &a, target: &[0.0, 1.0] }, BatchItem { weights: &b, target: &[1.0, 0.0] }];
    let src = CountingSource::new(&x);
    phase_phi_loss_grad(&p, &items, &src, 0.0).unwrap();
    let mut seen = src.rows.borrow().clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![2, 7, 31]);
}

#[test]
fn gradient_matches_finite_differences() {
    let x = gaussian_matrix(10, 3, 12);
    let omega = gaussian_matrix(4, 2, 13);
    let p = TransformParams::init(&[3, 4, 2], Activation::Tanh, 8).unwrap();
    let rows: Vec<Vec<(usize, f64)>> = (0..4).map(|z| vec![(z, 0.7), (z + 5, -0.4)]).collect();
    let items: Vec<BatchItem<'_>> = rows
        .iter()
        .enumerate()
        .map(|(z, r)| BatchItem { weights: r, target: omega.row(z) })
        .collect();
    let analytic = phase_phi_loss_grad(&p, &items, &x, 0.05).unwrap().flat();
    let base = p.flat();
    let h = 1e-6;
    for k in 0..base.len() {
        let mut plus = p.clone();
        let mut minus = p.clone();
        let mut v = base.clone();
        v[k] += h;
        plus.set_flat(&v).unwrap();
        v[k] -= 2.0 * h;
        minus.set_flat(&v).unwrap();
        let fd = (phase_phi_loss_grad(&plus, &items, &x, 0.05).unwrap().loss
            - phase_phi_loss_grad(&minus, &items, &x, 0.05).unwrap().loss)
            / (2.0 * h);
        assert!((fd - analytic[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", analytic[k]);
    }
}

#[test]
fn gd_lowers_loss_and_rejects_nan() {
    let x = gaussian_matrix(12, 3, 1);
    let omega = gaussian_matrix(12, 2, 2);
    let p = TransformParams::init(&[3, 6, 2], Activation::Relu, 3).unwrap();
    let rows: Vec<Vec<(usize, f64)>> = (0..12).map(|z| vec![(z, 1.0)]).collect();
    let items: Vec<BatchItem<'_>> = rows
        .iter()
        .enumerate()
        .map(|(z, r)| BatchItem { weights: r, target: omega.row(z) })
        .collect();
    let (_, losses) = gd_step(&p, 1e-2, 20, |q| phase_phi_loss_grad(q, &items, &x, 0.0)).unwrap();
    assert_eq!(losses.len(), 20);
    assert!(losses[19] < losses[0]);

    let mut bad = x.clone();
    bad.row_mut(0)[0] = f64::NAN;
    assert!(gd_step(&p, 1e-2, 1, |q| phase_phi_loss_grad(q, &items, &bad, 0.0)).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let p = TransformParams::init(&[4, 6, 3], Activation::Tanh, 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phi.bin");
    p.save(&path).unwrap();
    let back = TransformParams::load(&path).unwrap();
    assert_eq!(back, p);
    let mut bytes = p.encode();
    bytes.truncate(bytes.len() - 1);
    assert!(TransformParams::decode(&bytes).is_err());
}
