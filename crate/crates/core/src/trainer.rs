//! Alternating optimization of the sparse weights `Θ` and the transform `φ`.
//!
//! Each outer iteration takes the next mini-batch from a shuffled pass over
//! the training nodes, re-solves `θ_z` exactly for every node in it (Phase
//! Θ, nonnegative Lasso over the node's candidate set), then takes a few
//! gradient steps on `W` using the same batch (Phase φ). After the loop `W`
//! is frozen and `θ_z` is recomputed for every node.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::candidates::{build_all, CandidateConfig, CandidateSets};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::lasso::{solve_lars, LassoProblem};
use crate::matrix::{axpy, DenseMatrix, FeatureSource};
use crate::rng;
use crate::sampler::{build_theta0, warm_up_phi_multi, WalkConfig};
use crate::store::{SparseRow, SparseWeightStore};
use crate::transform::{
    accumulate_data_grad, add_weight_decay, forward_batch, gd_step, gd_step_backtracking, Activation, BatchItem,
    GradientBundle, TransformParams,
};

/// Receptive-field schedule: the active-set cap starts at `start` and drops
/// by `decay_by` every `decay_every` iterations, never below `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveSchedule {
    pub start: usize,
    pub decay_every: usize,
    pub decay_by: usize,
    pub floor: usize,
}

impl ActiveSchedule {
    pub fn at(&self, iteration: usize) -> usize {
        let drops = iteration / self.decay_every.max(1);
        self.start
            .saturating_sub(self.decay_by.saturating_mul(drops))
            .max(self.floor)
    }
}

/// Warm start of `φ` from a sampled `Ã^K` (see [`crate::sampler`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarmupConfig {
    pub walk: WalkConfig,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_active: usize,
    pub batch_size: usize,
    pub outer_iters: usize,
    /// Gradient steps on `W` per outer iteration.
    pub phi_steps: usize,
    pub lr: f64,
    /// Halve the rate of any Phase-φ step that would raise the batch loss.
    pub backtracking: bool,
    pub candidates: CandidateConfig,
    pub train_subset_fraction: f64,
    pub schedule: Option<ActiveSchedule>,
    pub seed: u64,
    /// Hidden widths of `φ`; `None` means one hidden layer of the output width.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub warmup: Option<WarmupConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 0.0,
            max_active: 16,
            batch_size: 64,
            outer_iters: 100,
            phi_steps: 5,
            lr: 1e-2,
            backtracking: false,
            candidates: CandidateConfig {
                k1: 2,
                ..Default::default()
            },
            train_subset_fraction: 1.0,
            schedule: None,
            seed: 0,
            hidden: None,
            activation: Activation::Relu,
            warmup: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1 must be finite and nonnegative");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2 must be finite and nonnegative");
        }
        if self.max_active == 0 {
            return bad("max_active must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and nonnegative");
        }
        if !(self.train_subset_fraction > 0.0 && self.train_subset_fraction <= 1.0) {
            return bad("train_subset_fraction must lie in (0, 1]");
        }
        if let Some(s) = &self.schedule {
            if s.floor == 0 || s.start == 0 {
                return bad("schedule start and floor must be at least 1");
            }
            if s.decay_every == 0 {
                return bad("schedule decay_every must be at least 1");
            }
        }
        if let Some(w) = &self.warmup {
            w.walk.validate()?;
        }
        self.candidates.validate()
    }

    /// Active-set cap in effect at `iteration` (the finalization pass uses
    /// `iteration = outer_iters`).
    pub fn effective_max_active(&self, iteration: usize) -> usize {
        match &self.schedule {
            Some(s) => s.at(iteration),
            None => self.max_active,
        }
    }

    fn layer_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        match &self.hidden {
            Some(h) => dims.extend_from_slice(h),
            None => dims.push(output),
        }
        dims.push(output);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Full objective restricted to the training nodes.
    pub objective: f64,
    pub mean_nnz: f64,
    pub max_active: usize,
    pub phase_theta_ms: f64,
    pub phase_phi_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub iterations: Vec<IterationRecord>,
    pub final_objective: f64,
    pub mean_nnz: f64,
    pub std_nnz: f64,
    pub warmup_ms: f64,
    pub finalize_ms: f64,
    /// Lasso solves that fell back to the reference solver.
    pub lars_fallbacks: usize,
    /// Solves where the previous `θ_z` scored better and was kept.
    pub kept_previous: usize,
    /// Set when training stopped early on a non-finite loss; the returned
    /// parameters are the last finite ones.
    pub aborted: Option<String>,
}

impl FitReport {
    /// One `iter=… obj=… mean_nnz=… phase_theta_ms=… phase_phi_ms=…` line
    /// per iteration.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.iterations {
            s.push_str(&format!(
                "iter={} obj={} mean_nnz={} phase_theta_ms={:.3} phase_phi_ms={:.3}\n",
                r.iter, r.objective, r.mean_nnz, r.phase_theta_ms, r.phase_phi_ms
            ));
        }
        s
    }
}

/// Result of a fit.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub params: TransformParams,
    pub store: SparseWeightStore,
    pub candidates: CandidateSets,
    pub report: FitReport,
}

/// Progress notifications from the trainer.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    /// A Phase-Θ solve. `iteration` is `None` during finalization.
    /// Objectives are the node sub-objective under the current `W`.
    ThetaSolved {
        iteration: Option<usize>,
        node: usize,
        previous_objective: f64,
        solver_objective: f64,
        new_objective: f64,
        nnz: usize,
    },
    IterationDone(IterationRecord),
}

/// Input features and targets of one snapshot.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub features: &'a DenseMatrix,
    pub targets: &'a DenseMatrix,
}

/// Fits `Θ` and `φ` to `omega` from a seeded random initialization.
pub fn fit(g: &Graph, x: &DenseMatrix, omega: &DenseMatrix, cfg: &TrainConfig) -> Result<Decomposition> {
    fit_multi(g, &[Snapshot { features: x, targets: omega }], cfg)
}

/// As [`fit`], starting from the given transform.
pub fn fit_from(
    g: &Graph,
    x: &DenseMatrix,
    omega: &DenseMatrix,
    cfg: &TrainConfig,
    init: TransformParams,
) -> Result<Decomposition> {
    Trainer::new(g, &[Snapshot { features: x, targets: omega }], cfg)?.run(Some(init), &mut |_| {})
}

/// Shared `Θ` across snapshots: Phase Θ stacks every snapshot's design and
/// target into one Lasso problem per node, and Phase φ sums the batch loss
/// over snapshots.
pub fn fit_multi(g: &Graph, snapshots: &[Snapshot<'_>], cfg: &TrainConfig) -> Result<Decomposition> {
    Trainer::new(g, snapshots, cfg)?.run(None, &mut |_| {})
}

/// Full-control entry point: optional initial transform and an event sink.
pub fn fit_observed(
    g: &Graph,
    snapshots: &[Snapshot<'_>],
    cfg: &TrainConfig,
    init: Option<TransformParams>,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<Decomposition> {
    Trainer::new(g, snapshots, cfg)?.run(init, observer)
}

struct Trainer<'a> {
    graph: &'a Graph,
    snapshots: &'a [Snapshot<'a>],
    cfg: &'a TrainConfig,
    n: usize,
}

struct NodeSolve {
    row: SparseRow,
    previous_objective: f64,
    solver_objective: f64,
    new_objective: f64,
    kept_previous: bool,
    fallback: bool,
}

impl<'a> Trainer<'a> {
    fn new(graph: &'a Graph, snapshots: &'a [Snapshot<'a>], cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = snapshots
            .first()
            .ok_or_else(|| Error::Shape("at least one snapshot is required".into()))?;
        let n = graph.num_nodes();
        let (din, dout) = (first.features.cols(), first.targets.cols());
        for (s, snap) in snapshots.iter().enumerate() {
            if snap.features.rows() != n || snap.targets.rows() != n {
                return Err(Error::Shape(format!(
                    "snapshot {s}: {} feature rows and {} target rows for {n} nodes",
                    snap.features.rows(),
                    snap.targets.rows()
                )));
            }
            if snap.features.cols() != din || snap.targets.cols() != dout {
                return Err(Error::Shape(format!("snapshot {s}: dimensions differ from snapshot 0")));
            }
            snap.features.ensure_finite()?;
            snap.targets.ensure_finite()?;
        }
        Ok(Self {
            graph,
            snapshots,
            cfg,
            n,
        })
    }

    fn run(&self, init: Option<TransformParams>, observer: &mut dyn FnMut(&TrainEvent)) -> Result<Decomposition> {
        let cfg = self.cfg;
        let din = self.snapshots[0].features.cols();
        let dout = self.snapshots[0].targets.cols();
        let mut params = match init {
            Some(p) => p,
            None => TransformParams::init(&cfg.layer_dims(din, dout), cfg.activation, cfg.seed)?,
        };
        if params.input_dim() != din || params.output_dim() != dout {
            return Err(Error::Shape(format!(
                "transform maps {} -> {} but data is {din} -> {dout}",
                params.input_dim(),
                params.output_dim()
            )));
        }
        let mut report = FitReport::default();

        if let Some(w) = &cfg.warmup {
            let t = Instant::now();
            let na = NormalizedAdjacency::new(self.graph);
            let nodes: Vec<usize> = (0..self.n).collect();
            let theta0 = build_theta0(&na, &w.walk, &nodes, cfg.effective_max_active(0))?;
            let snaps: Vec<(&DenseMatrix, &DenseMatrix)> =
                self.snapshots.iter().map(|s| (s.features, s.targets)).collect();
            let (warm, _) = warm_up_phi_multi(
                &params,
                &snaps,
                &theta0,
                w.steps,
                cfg.lr,
                cfg.lambda2,
                cfg.batch_size,
                cfg.seed,
            )?;
            params = warm;
            report.warmup_ms = t.elapsed().as_secs_f64() * 1e3;
        }

        let candidates = build_all(self.graph, &cfg.candidates)?;

        let mut r = rng::stream(cfg.seed, &[0x5452]);
        let mut train_nodes: Vec<usize> = (0..self.n).collect();
        if cfg.train_subset_fraction < 1.0 {
            let keep = ((cfg.train_subset_fraction * self.n as f64).ceil() as usize).clamp(1, self.n);
            train_nodes.shuffle(&mut r);
            train_nodes.truncate(keep);
            train_nodes.sort_unstable();
        }

        let mut theta: Vec<SparseRow> = vec![Vec::new(); self.n];
        let batch_size = cfg.batch_size.min(train_nodes.len()).max(1);
        let mut order = train_nodes.clone();
        order.shuffle(&mut r);
        let mut cursor = 0;

        for t in 0..cfg.outer_iters {
            if cursor >= order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            let end = (cursor + batch_size).min(order.len());
            let batch: Vec<usize> = order[cursor..end].to_vec();
            cursor = end;
            let max_active = cfg.effective_max_active(t);

            let t_theta = Instant::now();
            let solves = self.phase_theta(&params, &candidates, &theta, &batch, max_active)?;
            for (&z, s) in batch.iter().zip(solves) {
                report.lars_fallbacks += s.fallback as usize;
                report.kept_previous += s.kept_previous as usize;
                observer(&TrainEvent::ThetaSolved {
                    iteration: Some(t),
                    node: z,
                    previous_objective: s.previous_objective,
                    solver_objective: s.solver_objective,
                    new_objective: s.new_objective,
                    nnz: s.row.len(),
                });
                theta[z] = s.row;
            }
            let phase_theta_ms = t_theta.elapsed().as_secs_f64() * 1e3;

            let t_phi = Instant::now();
            match self.phase_phi(&params, &theta, &batch) {
                Ok(p) => params = p,
                Err(Error::Numeric(msg)) => {
                    report.aborted = Some(format!("iteration {t}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
            let phase_phi_ms = t_phi.elapsed().as_secs_f64() * 1e3;

            let objective = self.objective_over(&params, &theta, &train_nodes)?;
            let mean_nnz =
                train_nodes.iter().map(|&z| theta[z].len()).sum::<usize>() as f64 / train_nodes.len() as f64;
            let rec = IterationRecord {
                iter: t,
                objective,
                mean_nnz,
                max_active,
                phase_theta_ms,
                phase_phi_ms,
            };
            observer(&TrainEvent::IterationDone(rec.clone()));
            report.iterations.push(rec);
        }

        // finalization with W frozen
        let t_fin = Instant::now();
        let max_active = cfg.effective_max_active(cfg.outer_iters);
        let all: Vec<usize> = (0..self.n).collect();
        let solves = self.phase_theta(&params, &candidates, &theta, &all, max_active)?;
        for (z, s) in solves.into_iter().enumerate() {
            report.lars_fallbacks += s.fallback as usize;
            report.kept_previous += s.kept_previous as usize;
            observer(&TrainEvent::ThetaSolved {
                iteration: None,
                node: z,
                previous_objective: s.previous_objective,
                solver_objective: s.solver_objective,
                new_objective: s.new_objective,
                nnz: s.row.len(),
            });
            theta[z] = s.row;
        }
        report.finalize_ms = t_fin.elapsed().as_secs_f64() * 1e3;

        let store = SparseWeightStore::from_rows(theta);
        report.final_objective = self.objective_store(&params, &store)?;
        let (mean, std) = store.nnz_stats();
        report.mean_nnz = mean;
        report.std_nnz = std;
        Ok(Decomposition {
            params,
            store,
            candidates,
            report,
        })
    }

    /// Exact per-node solves for `nodes`; results are in `nodes` order.
    fn phase_theta(
        &self,
        params: &TransformParams,
        candidates: &CandidateSets,
        theta: &[SparseRow],
        nodes: &[usize],
        max_active: usize,
    ) -> Result<Vec<NodeSolve>> {
        let mut rows: Vec<usize> = nodes
            .iter()
            .flat_map(|&z| candidates.get(z).members.iter().copied())
            .collect();
        rows.sort_unstable();
        rows.dedup();
        let transformed: Vec<DenseMatrix> = self
            .snapshots
            .iter()
            .map(|s| forward_batch(params, s.features, &rows))
            .collect::<Result<_>>()?;
        let d = params.output_dim();
        let width = d * self.snapshots.len();

        nodes
            .par_iter()
            .map(|&z| {
                let members = &candidates.get(z).members;
                let mut design = DenseMatrix::zeros(members.len(), width);
                for (k, &c) in members.iter().enumerate() {
                    let slot = rows.binary_search(&c).unwrap();
                    let out = design.row_mut(k);
                    for (s, phi) in transformed.iter().enumerate() {
                        out[s * d..(s + 1) * d].copy_from_slice(phi.row(slot));
                    }
                }
                let mut target = Vec::with_capacity(width);
                for s in self.snapshots {
                    target.extend_from_slice(s.targets.row(z));
                }
                let problem = LassoProblem::new(design, target, self.cfg.lambda1, max_active);

                let prev: Vec<f64> = {
                    let mut v = vec![0.0; members.len()];
                    for &(i, w) in &theta[z] {
                        if let Ok(k) = members.binary_search(&i) {
                            v[k] = w;
                        }
                    }
                    v
                };
                let previous_objective = problem.objective_dense(&prev);
                let sol = solve_lars(&problem);
                let solver_objective = sol.objective;
                let prev_feasible = theta[z].len() <= max_active;
                let (row, new_objective, kept_previous) = if prev_feasible && previous_objective < solver_objective {
                    (theta[z].clone(), previous_objective, true)
                } else {
                    let row: SparseRow = sol.entries.iter().map(|&(k, w)| (members[k], w)).collect();
                    (row, solver_objective, false)
                };
                Ok(NodeSolve {
                    row,
                    previous_objective,
                    solver_objective,
                    new_objective,
                    kept_previous,
                    fallback: sol.used_fallback,
                })
            })
            .collect()
    }

    fn phase_phi(&self, params: &TransformParams, theta: &[SparseRow], batch: &[usize]) -> Result<TransformParams> {
        let grad = |p: &TransformParams| -> Result<GradientBundle> {
            let mut g = GradientBundle::zeros_like(p);
            for s in self.snapshots {
                let items: Vec<BatchItem<'_>> = batch
                    .iter()
                    .map(|&z| BatchItem {
                        weights: &theta[z],
                        target: s.targets.row(z),
                    })
                    .collect();
                g.loss += accumulate_data_grad(p, s.features, &items, &mut g)?;
            }
            add_weight_decay(p, self.cfg.lambda2, &mut g);
            if !g.loss.is_finite() {
                return Err(Error::Numeric("non-finite loss".into()));
            }
            Ok(g)
        };
        if self.cfg.backtracking {
            Ok(gd_step_backtracking(params, self.cfg.lr, self.cfg.phi_steps, grad)?.0)
        } else {
            Ok(gd_step(params, self.cfg.lr, self.cfg.phi_steps, grad)?.0)
        }
    }

    fn objective_over(&self, params: &TransformParams, theta: &[SparseRow], nodes: &[usize]) -> Result<f64> {
        let mut data = 0.0;
        for s in self.snapshots {
            data += data_term(params, s.features, s.targets, nodes.iter().map(|&z| (z, theta[z].as_slice())))?;
        }
        let l1: f64 = nodes.iter().flat_map(|&z| theta[z].iter().map(|e| e.1.abs())).sum();
        Ok(data + self.cfg.lambda1 * l1 + self.cfg.lambda2 * params.weight_norm_sq())
    }

    fn objective_store(&self, params: &TransformParams, store: &SparseWeightStore) -> Result<f64> {
        let mut total = 0.0;
        for s in self.snapshots {
            total += objective(s.features, s.targets, params, store, self.cfg.lambda1, 0.0)?;
        }
        // the penalties are shared by all snapshots
        let penalties = (self.snapshots.len() as f64 - 1.0) * self.cfg.lambda1 * store.l1();
        Ok(total - penalties + self.cfg.lambda2 * params.weight_norm_sq())
    }
}

/// `½ Σ ‖Σ_i w_i φ(x_i) − ω_z‖²` over the given rows.
fn data_term<'r>(
    params: &TransformParams,
    features: &(impl FeatureSource + ?Sized),
    omega: &DenseMatrix,
    rows: impl Iterator<Item = (usize, &'r [(usize, f64)])> + Clone,
) -> Result<f64> {
    let mut ids: Vec<usize> = rows.clone().flat_map(|(_, r)| r.iter().map(|e| e.0)).collect();
    ids.sort_unstable();
    ids.dedup();
    let phi = forward_batch(params, features, &ids)?;
    let mut total = 0.0;
    let mut pred = vec![0.0; omega.cols()];
    for (z, row) in rows {
        pred.iter_mut().for_each(|v| *v = 0.0);
        for &(i, w) in row {
            axpy(w, phi.row(ids.binary_search(&i).unwrap()), &mut pred);
        }
        total += 0.5
            * pred
                .iter()
                .zip(omega.row(z))
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
    }
    Ok(total)
}

/// `ΘᵀΦ(X; W)`: row `z` is `Σ_i θ_z[i] φ(x_i)`. Undecomposed nodes give zero rows.
pub fn reconstruct(
    params: &TransformParams,
    features: &(impl FeatureSource + ?Sized),
    store: &SparseWeightStore,
) -> Result<DenseMatrix> {
    let mut ids: Vec<usize> = store.iter().flat_map(|(_, r)| r.iter().map(|e| e.0)).collect();
    ids.sort_unstable();
    ids.dedup();
    let phi = forward_batch(params, features, &ids)?;
    let mut out = DenseMatrix::zeros(store.num_nodes(), params.output_dim());
    for (z, row) in store.iter() {
        let o = out.row_mut(z);
        for &(i, w) in row {
            axpy(w, phi.row(ids.binary_search(&i).unwrap()), o);
        }
    }
    Ok(out)
}

/// `½‖ΘᵀΦ(X;W) − Ω‖²_F + λ1‖Θ‖_{1,1} + λ2‖W‖²_F` (weights only, not biases).
pub fn objective(
    features: &(impl FeatureSource + ?Sized),
    omega: &DenseMatrix,
    params: &TransformParams,
    store: &SparseWeightStore,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    if store.num_nodes() != omega.rows() {
        return Err(Error::Shape(format!(
            "store covers {} nodes, targets have {} rows",
            store.num_nodes(),
            omega.rows()
        )));
    }
    let rows = (0..omega.rows()).map(|z| (z, store.row_or_empty(z)));
    let data = data_term(params, features, omega, rows)?;
    Ok(data + lambda1 * store.l1() + lambda2 * params.weight_norm_sq())
}

/// How [`equalize`] assigns the common weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EqualizeRule {
    /// Each nonzero becomes `Σ θ / k`, keeping the row's L1 mass.
    #[default]
    PreserveMass,
    /// Each nonzero becomes `1 / k`.
    UnitMass,
}

/// Replaces every row's nonzero weights with equal weights on the same support.
pub fn equalize(store: &SparseWeightStore, rule: EqualizeRule) -> SparseWeightStore {
    let mut out = store.clone();
    for (z, row) in store.iter() {
        if row.is_empty() {
            continue;
        }
        let k = row.len() as f64;
        let value = match rule {
            EqualizeRule::PreserveMass => row.iter().map(|e| e.1).sum::<f64>() / k,
            EqualizeRule::UnitMass => 1.0 / k,
        };
        out.set(z, row.iter().map(|&(i, _)| (i, value)).collect());
    }
    out
}
