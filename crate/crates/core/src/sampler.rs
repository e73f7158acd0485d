//! Monte-Carlo estimates of rows of `Ã^K` by forward sampling and backward
//! aggregation, and the warm start of `φ` built on them.
//!
//! For a centre `z`, forward sampling draws (with replacement) `s_{k+1}`
//! neighbours of every seed node of layer `k` and deduplicates the result
//! into the seeds of layer `k+1`. Backward aggregation then folds
//! `A^(k)_v = (1/s_{k+1}) Σ_{i∈S_v} (Ã_vi / p_vi) A^(k+1)_i` from
//! `A^(K)_i = e_i` down to `A^(0)_z`, an unbiased estimate of `(Ã^K)_{z*}`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{DenseMatrix, FeatureSource};
use crate::rng;
use crate::store::{SparseRow, SparseWeightStore};
use crate::transform::{add_weight_decay, accumulate_data_grad, apply_gradient, BatchItem, GradientBundle, TransformParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbMode {
    /// `p_zi ∝ Ã_zi`.
    ProportionalToWeight,
    /// `p_zi ∝ Ã_zi ‖Ã_{i*}‖₂`.
    VarianceOptimal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkConfig {
    pub hops: usize,
    /// `s_1 … s_K`.
    pub budgets: Vec<usize>,
    pub prob_mode: ProbMode,
    pub seed: u64,
}

impl WalkConfig {
    pub fn uniform(hops: usize, budget: usize, prob_mode: ProbMode, seed: u64) -> Self {
        Self {
            hops,
            budgets: vec![budget; hops],
            prob_mode,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::Config("walk needs at least one hop".into()));
        }
        if self.budgets.len() != self.hops || self.budgets.contains(&0) {
            return Err(Error::Config(format!(
                "need {} positive budgets, got {:?}",
                self.hops, self.budgets
            )));
        }
        Ok(())
    }
}

/// Sampling distribution over `neighbors(z)` (same order).
pub fn sampling_probs(na: &NormalizedAdjacency, z: usize, mode: ProbMode) -> Result<Vec<f64>> {
    probs_for(na, z, mode, true)
}

/// With `use_norms == false` the distribution is proportional to the edge
/// weight. On the last hop the remaining power is `Ã^0 = I`, whose rows all
/// have unit norm, so proportional sampling is already variance-optimal
/// there.
fn probs_for(na: &NormalizedAdjacency, z: usize, mode: ProbMode, use_norms: bool) -> Result<Vec<f64>> {
    let (ids, ws) = na.row(z);
    if ids.is_empty() {
        return Err(Error::Isolated(z));
    }
    let raw: Vec<f64> = match mode {
        ProbMode::VarianceOptimal if use_norms => ids
            .iter()
            .zip(ws)
            .map(|(&i, &w)| w * na.row_norm(i))
            .collect(),
        _ => ws.to_vec(),
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Sparse row estimate, ids ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRowEstimate {
    pub entries: SparseRow,
}

impl SparseRowEstimate {
    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|e| e.1.abs()).sum()
    }
}

/// One forward-sampling / backward-aggregation estimate of `(Ã^K)_{z*}`.
pub fn estimate_row(na: &NormalizedAdjacency, z: usize, cfg: &WalkConfig) -> Result<SparseRowEstimate> {
    let mut r = rng::stream(cfg.seed, &[0x5357, z as u64]);
    estimate_row_with(na, z, cfg, &mut r)
}

/// Same as [`estimate_row`] but drawing from a caller-supplied RNG, so that
/// repeated independent estimates can share one stream.
pub fn estimate_row_with(
    na: &NormalizedAdjacency,
    z: usize,
    cfg: &WalkConfig,
    rng: &mut impl rand::Rng,
) -> Result<SparseRowEstimate> {
    cfg.validate()?;
    if na.graph().degree(z) == 0 {
        return Err(Error::Isolated(z));
    }
    let k_max = cfg.hops;

    // forward sampling; draws[k][v] = (child ids with multiplicity, Ã/p factors)
    let mut seeds: Vec<Vec<usize>> = vec![vec![z]];
    let mut draws: Vec<BTreeMap<usize, Vec<(usize, f64)>>> = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let remaining = k_max - (k + 1);
        let mut layer = BTreeMap::new();
        let mut next = Vec::new();
        for &v in &seeds[k] {
            let probs = probs_for(na, v, cfg.prob_mode, remaining > 0)?;
            let (ids, ws) = na.row(v);
            let dist = WeightedIndex::new(&probs)
                .map_err(|e| Error::Numeric(format!("sampling distribution of node {v}: {e}")))?;
            let picks: Vec<(usize, f64)> = (0..cfg.budgets[k])
                .map(|_| {
                    let j = dist.sample(rng);
                    (ids[j], ws[j] / probs[j])
                })
                .collect();
            next.extend(picks.iter().map(|p| p.0));
            layer.insert(v, picks);
        }
        next.sort_unstable();
        next.dedup();
        draws.push(layer);
        seeds.push(next);
    }

    // backward aggregation
    let mut below: BTreeMap<usize, BTreeMap<usize, f64>> = seeds[k_max]
        .iter()
        .map(|&i| (i, BTreeMap::from([(i, 1.0)])))
        .collect();
    for k in (0..k_max).rev() {
        let scale = 1.0 / cfg.budgets[k] as f64;
        let mut here = BTreeMap::new();
        for &v in &seeds[k] {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for &(i, factor) in &draws[k][&v] {
                for (&j, &w) in &below[&i] {
                    *acc.entry(j).or_insert(0.0) += scale * factor * w;
                }
            }
            here.insert(v, acc);
        }
        below = here;
    }
    let entries = below
        .remove(&z)
        .unwrap_or_default()
        .into_iter()
        .collect();
    Ok(SparseRowEstimate { entries })
}

/// Exact `(Ã^K)_{z*}` by sparse propagation.
pub fn exact_power_row(na: &NormalizedAdjacency, z: usize, hops: usize) -> SparseRow {
    let mut cur: BTreeMap<usize, f64> = BTreeMap::from([(z, 1.0)]);
    for _ in 0..hops {
        let mut next = BTreeMap::new();
        for (&v, &w) in &cur {
            let (ids, ws) = na.row(v);
            for (&i, &a) in ids.iter().zip(ws) {
                *next.entry(i).or_insert(0.0) += w * a;
            }
        }
        cur = next;
    }
    cur.into_iter().filter(|e| e.1 != 0.0).collect()
}

/// Initial weights `Θ0` from sampled rows of `Ã^K` for `nodes`.
///
/// Each row keeps its `max_active` largest weights (ties to the lower id),
/// rescaled to the L1 mass of the untruncated row. Isolated nodes get an
/// empty row.
pub fn build_theta0(
    na: &NormalizedAdjacency,
    cfg: &WalkConfig,
    nodes: &[usize],
    max_active: usize,
) -> Result<SparseWeightStore> {
    cfg.validate()?;
    let rows = nodes
        .par_iter()
        .map(|&z| -> Result<SparseRow> {
            if na.graph().degree(z) == 0 {
                return Ok(Vec::new());
            }
            let est = estimate_row(na, z, cfg)?;
            Ok(truncate_row(est.entries, max_active))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut store = SparseWeightStore::new(na.num_nodes());
    for (&z, row) in nodes.iter().zip(rows) {
        store.set(z, row);
    }
    Ok(store)
}

fn truncate_row(row: SparseRow, max_active: usize) -> SparseRow {
    let row: SparseRow = row.into_iter().map(|(i, w)| (i, w.max(0.0))).filter(|e| e.1 > 0.0).collect();
    let mass: f64 = row.iter().map(|e| e.1).sum();
    if row.len() <= max_active {
        return row;
    }
    let mut by_weight = row;
    by_weight.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    by_weight.truncate(max_active);
    let kept: f64 = by_weight.iter().map(|e| e.1).sum();
    let scale = if kept > 0.0 { mass / kept } else { 0.0 };
    let mut out: SparseRow = by_weight.into_iter().map(|(i, w)| (i, w * scale)).collect();
    out.sort_unstable_by_key(|e| e.0);
    out
}

/// Warms up `φ` by gradient descent on the mini-batch reconstruction loss
/// with `Θ` frozen at `theta0`.
///
/// Batches are drawn from a shuffled pass over the decomposed nodes of
/// `theta0`; each of the `steps` updates uses one batch. Returns the warmed
/// parameters and the loss before each step.
#[allow(clippy::too_many_arguments)]
pub fn warm_up_phi(
    params: &TransformParams,
    features: &(impl FeatureSource + Sync + ?Sized),
    omega: &DenseMatrix,
    theta0: &SparseWeightStore,
    steps: usize,
    lr: f64,
    lambda2: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(TransformParams, Vec<f64>)> {
    warm_up_phi_multi(params, &[(features, omega)], theta0, steps, lr, lambda2, batch_size, seed)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn warm_up_phi_multi<F: FeatureSource + Sync + ?Sized>(
    params: &TransformParams,
    snapshots: &[(&F, &DenseMatrix)],
    theta0: &SparseWeightStore,
    steps: usize,
    lr: f64,
    lambda2: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(TransformParams, Vec<f64>)> {
    let nodes: Vec<usize> = theta0.iter().map(|(z, _)| z).collect();
    if nodes.is_empty() || steps == 0 {
        return Ok((params.clone(), Vec::new()));
    }
    let batch_size = batch_size.clamp(1, nodes.len());
    let mut r = rng::stream(seed, &[0x574d]);
    let mut order = nodes.clone();
    order.shuffle(&mut r);
    let mut cursor = 0;
    let mut current = params.clone();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut r);
            cursor = 0;
        }
        let batch = &order[cursor..cursor + batch_size];
        cursor += batch_size;
        let mut g = GradientBundle::zeros_like(&current);
        for (x, omega) in snapshots {
            let items: Vec<BatchItem<'_>> = batch
                .iter()
                .map(|&z| BatchItem {
                    weights: theta0.row_or_empty(z),
                    target: omega.row(z),
                })
                .collect();
            g.loss += accumulate_data_grad(&current, *x, &items, &mut g)?;
        }
        add_weight_decay(&current, lambda2, &mut g);
        losses.push(g.loss);
        current = apply_gradient(&current, &g, lr)?;
    }
    Ok((current, losses))
}
