//! Nonnegative Lasso for a single node's weight vector.
//!
//! The problem is `min_θ ½‖θᵀΦ − ω‖² + λ‖θ‖₁  s.t. θ ≥ 0`, where row `i` of
//! `Φ` is the transformed feature vector of candidate `i`. [`solve_lars`]
//! follows the positive Lasso path from `λ = max_i ⟨Φ_i, ω⟩` down to the
//! requested penalty; [`solve_oracle`] is an unrelated projected coordinate
//! descent used to check it.

use crate::matrix::{axpy, cholesky_in_place, cholesky_solve, dot, norm_sq, DenseMatrix};

#[derive(Debug, Clone)]
pub struct LassoProblem {
    /// `|C| × d`; row `i` is the design vector of candidate `i`.
    pub design: DenseMatrix,
    /// Length `d`.
    pub target: Vec<f64>,
    pub lambda1: f64,
    pub max_active: usize,
}

impl LassoProblem {
    pub fn new(design: DenseMatrix, target: Vec<f64>, lambda1: f64, max_active: usize) -> Self {
        debug_assert_eq!(design.cols(), target.len());
        Self {
            design,
            target,
            lambda1,
            max_active,
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.design.rows()
    }

    /// `Φ (ω − Φᵀθ)` for a dense coefficient vector.
    pub fn correlations(&self, theta: &[f64]) -> Vec<f64> {
        let r = self.residual(theta);
        (0..self.design.rows())
            .map(|i| dot(self.design.row(i), &r))
            .collect()
    }

    fn residual(&self, theta: &[f64]) -> Vec<f64> {
        let mut r = self.target.clone();
        for (i, &t) in theta.iter().enumerate() {
            if t != 0.0 {
                axpy(-t, self.design.row(i), &mut r);
            }
        }
        r
    }

    /// Objective value at a dense coefficient vector.
    pub fn objective_dense(&self, theta: &[f64]) -> f64 {
        0.5 * norm_sq(&self.residual(theta)) + self.lambda1 * theta.iter().sum::<f64>()
    }

    pub fn objective(&self, s: &SparseSolution) -> f64 {
        self.objective_dense(&s.to_dense(self.num_candidates()))
    }

    /// `½‖ω‖²`, the objective at `θ = 0`.
    pub fn null_objective(&self) -> f64 {
        0.5 * norm_sq(&self.target)
    }
}

/// Sparse nonnegative coefficients indexed by candidate position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseSolution {
    /// `(candidate index, weight)`, indices ascending, weights > 0.
    pub entries: Vec<(usize, f64)>,
    pub objective: f64,
    /// Path steps taken (entries, drops and the final step).
    pub iterations: usize,
    pub drops: usize,
    /// Set when the path solver hit a numerical problem and the result comes
    /// from [`solve_oracle`] instead.
    pub used_fallback: bool,
}

impl SparseSolution {
    pub fn empty(objective: f64) -> Self {
        Self {
            objective,
            ..Default::default()
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for &(i, w) in &self.entries {
            v[i] = w;
        }
        v
    }

    fn from_dense(theta: &[f64], objective: f64) -> Self {
        Self {
            entries: theta
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, &w)| (i, w))
                .collect(),
            objective,
            ..Default::default()
        }
    }
}

/// Largest KKT violation of `s` for `p`.
///
/// Active coordinates must have correlation exactly `λ`; inactive ones at
/// most `λ`.
pub fn kkt_residual(p: &LassoProblem, s: &SparseSolution) -> f64 {
    let theta = s.to_dense(p.num_candidates());
    let c = p.correlations(&theta);
    c.iter()
        .zip(&theta)
        .map(|(&ci, &ti)| {
            if ti > 0.0 {
                (ci - p.lambda1).abs()
            } else {
                (ci - p.lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

enum Event {
    Enter(usize),
    Drop(usize),
    Finish,
}

/// Factorizes the active Gram matrix, adding `1e-10·trace` to the diagonal
/// when it is numerically singular.
fn factor_gram(design: &DenseMatrix, active: &[usize]) -> Option<Vec<f64>> {
    let k = active.len();
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..=a {
            let v = dot(design.row(active[a]), design.row(active[b]));
            g[a * k + b] = v;
            g[b * k + a] = v;
        }
    }
    let trace: f64 = (0..k).map(|a| g[a * k + a]).sum();
    let mut l = g.clone();
    if cholesky_in_place(&mut l, k).is_some() {
        let min_pivot = (0..k).map(|a| l[a * k + a]).fold(f64::INFINITY, f64::min);
        if min_pivot * min_pivot > 1e-12 * trace / k as f64 {
            return Some(l);
        }
    }
    let jitter = 1e-10 * trace;
    for a in 0..k {
        g[a * k + a] += jitter;
    }
    cholesky_in_place(&mut g, k).map(|_| g)
}

/// Positive Lasso path (LARS with the Lasso modification).
///
/// Active variables share the maximal correlation `λ`; as `λ` decreases the
/// active coefficients move along `G_AA⁻¹ 1`. A variable enters when its
/// correlation catches up with `λ` and leaves when its coefficient reaches
/// zero. Ties on entry go to the lowest candidate index. Once `max_active`
/// variables are active, the path stops at the point where the next one
/// would enter, which is the exact solution for that larger `λ`.
///
/// If the path breaks down numerically or ends off the KKT conditions, the
/// result is repaired by warm-started coordinate descent and
/// `used_fallback` is set.
pub fn solve_lars(p: &LassoProblem) -> SparseSolution {
    let path = lars_path(p);
    if let Some(s) = &path {
        // a stalled path (ties, near-collinear candidates) shows up as a KKT failure
        let scale = (0..p.num_candidates())
            .map(|i| dot(p.design.row(i), &p.target).abs())
            .fold(1.0f64, f64::max);
        if s.nnz() >= p.max_active.max(1) || kkt_residual(p, s) <= 1e-8 * scale {
            return path.unwrap();
        }
    }
    let mut s = repair(p, path.as_ref());
    s.used_fallback = true;
    match path {
        Some(l) if l.objective <= s.objective => SparseSolution {
            used_fallback: true,
            ..l
        },
        _ => s,
    }
}

/// Bounded coordinate descent warm-started from `start`; a support larger
/// than `max_active` is cut to its largest weights and re-solved.
fn repair(p: &LassoProblem, start: Option<&SparseSolution>) -> SparseSolution {
    let n = p.num_candidates();
    let init = start.map(|s| s.to_dense(n)).unwrap_or_else(|| vec![0.0; n]);
    let all: Vec<usize> = (0..n).collect();
    let (mut theta, mut obj) = coordinate_descent(p, &all, &init, REPAIR_MAX_SWEEPS);
    let max_active = p.max_active.max(1);
    let mut support: Vec<usize> = all.into_iter().filter(|&j| theta[j] > 0.0).collect();
    if support.len() > max_active {
        support.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]).then(a.cmp(&b)));
        support.truncate(max_active);
        support.sort_unstable();
        (theta, obj) = coordinate_descent(p, &support, &theta, REPAIR_MAX_SWEEPS);
    }
    SparseSolution::from_dense(&theta, obj)
}

fn lars_path(p: &LassoProblem) -> Option<SparseSolution> {
    let n = p.num_candidates();
    let lambda1 = p.lambda1;
    let max_active = p.max_active.max(1);
    let design = &p.design;

    let corr0: Vec<f64> = (0..n).map(|i| dot(design.row(i), &p.target)).collect();
    if corr0.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let Some((first, lambda_max)) = argmax_first(&corr0, |_| true) else {
        return Some(SparseSolution::empty(p.null_objective()));
    };
    if lambda_max <= lambda1 || lambda_max <= 0.0 {
        return Some(SparseSolution::empty(p.null_objective()));
    }

    let mut active = vec![first];
    let mut is_active = vec![false; n];
    is_active[first] = true;
    let mut lambda = lambda_max;
    let mut coef: Vec<f64> = vec![0.0];
    let mut last_dropped: Option<usize> = None;
    // candidates lying in the span of the current active rows
    let mut collinear = vec![false; n];
    let mut skips = 0usize;
    let mut iterations = 0usize;
    let mut drops = 0usize;
    let max_iter = 8 * (n + max_active) + 64;

    loop {
        iterations += 1;
        if iterations > max_iter + skips {
            return None;
        }
        let l = factor_gram(design, &active)?;
        let k = active.len();
        let mut rhs: Vec<f64> = active.iter().map(|&a| corr0[a] - lambda).collect();
        cholesky_solve(&l, k, &mut rhs);
        coef = rhs;
        let mut dir = vec![1.0; k];
        cholesky_solve(&l, k, &mut dir);
        if coef.iter().chain(&dir).any(|v| !v.is_finite()) {
            return None;
        }

        let mut fitted = vec![0.0; p.target.len()];
        let mut slope = vec![0.0; p.target.len()];
        for (a, &j) in active.iter().enumerate() {
            axpy(coef[a], design.row(j), &mut fitted);
            axpy(dir[a], design.row(j), &mut slope);
        }
        let residual: Vec<f64> = p.target.iter().zip(&fitted).map(|(t, f)| t - f).collect();

        let mut step = lambda - lambda1;
        let mut event = Event::Finish;
        for j in 0..n {
            if is_active[j] || collinear[j] || Some(j) == last_dropped {
                continue;
            }
            let row = design.row(j);
            let a_j = dot(row, &slope);
            let c_j = dot(row, &residual);
            let denom = 1.0 - a_j;
            if denom <= 1e-12 {
                continue;
            }
            let d = ((lambda - c_j) / denom).max(0.0);
            if d < step {
                step = d;
                event = Event::Enter(j);
            }
        }
        for (a, &j) in active.iter().enumerate() {
            if dir[a] < 0.0 {
                let d = (-coef[a] / dir[a]).max(0.0);
                if d < step {
                    step = d;
                    event = Event::Drop(j);
                }
            }
        }

        let next_lambda = match event {
            Event::Finish => lambda1,
            _ => lambda - step,
        };
        match event {
            Event::Finish => {
                lambda = next_lambda;
                break;
            }
            Event::Enter(j) => {
                if in_span(design, &active, &l, j) {
                    collinear[j] = true;
                    skips += 1;
                    continue;
                }
                lambda = next_lambda;
                if active.len() >= max_active {
                    break;
                }
                active.push(j);
                is_active[j] = true;
                last_dropped = None;
            }
            Event::Drop(j) => {
                lambda = next_lambda;
                let pos = active.iter().position(|&a| a == j).unwrap();
                active.remove(pos);
                is_active[j] = false;
                last_dropped = Some(j);
                collinear.iter_mut().for_each(|c| *c = false);
                drops += 1;
                if active.is_empty() {
                    return None;
                }
            }
        }
    }

    // coefficients at the final λ on the final active set
    let l = factor_gram(design, &active)?;
    let k = active.len();
    let mut rhs: Vec<f64> = active.iter().map(|&a| corr0[a] - lambda).collect();
    cholesky_solve(&l, k, &mut rhs);
    coef = rhs;
    if coef.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let mut entries: Vec<(usize, f64)> = active
        .iter()
        .zip(&coef)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&j, &w)| (j, w))
        .collect();
    entries.sort_unstable_by_key(|e| e.0);
    let mut s = SparseSolution {
        entries,
        objective: 0.0,
        iterations: iterations - skips,
        drops,
        used_fallback: false,
    };
    s.objective = p.objective(&s);
    if !s.objective.is_finite() {
        return None;
    }
    Some(s)
}

/// Whether row `j` is numerically a combination of the active rows, given
/// the Cholesky factor `l` of their Gram matrix.
fn in_span(design: &DenseMatrix, active: &[usize], l: &[f64], j: usize) -> bool {
    let row = design.row(j);
    let norm = norm_sq(row);
    if norm == 0.0 {
        return true;
    }
    let b: Vec<f64> = active.iter().map(|&a| dot(design.row(a), row)).collect();
    let mut v = b.clone();
    cholesky_solve(l, active.len(), &mut v);
    let explained = dot(&b, &v);
    norm - explained <= 1e-9 * norm
}

fn argmax_first(values: &[f64], allowed: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if allowed(i) && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

const ORACLE_GRAD_TOL: f64 = 1e-10;
const ORACLE_OBJ_TOL: f64 = 1e-12;
const ORACLE_MAX_SWEEPS: usize = 200_000;
const REPAIR_MAX_SWEEPS: usize = 5_000;

/// Projected coordinate descent on the coordinates in `allowed`, with each
/// converged support polished by an exact restricted least-squares solve.
fn coordinate_descent(p: &LassoProblem, allowed: &[usize], init: &[f64], max_sweeps: usize) -> (Vec<f64>, f64) {
    let (mut theta, mut obj) = descend(p, allowed, init, max_sweeps);
    for _ in 0..4 {
        let Some(t) = polish(p, &theta) else { break };
        let o = p.objective_dense(&t);
        if o.is_nan() || o >= obj {
            break;
        }
        (theta, obj) = (t, o);
        let (t, o) = descend(p, allowed, &theta, max_sweeps);
        if o.is_nan() || o >= obj {
            break;
        }
        (theta, obj) = (t, o);
    }
    (theta, obj)
}

/// Solves `G_SS θ_S = Φ_S ω − λ` on the support of `theta`; `None` when the
/// system is singular or the result is not strictly positive.
fn polish(p: &LassoProblem, theta: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] > 0.0).collect();
    let k = support.len();
    if k == 0 {
        return None;
    }
    let mut g = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..=a {
            let v = dot(p.design.row(support[a]), p.design.row(support[b]));
            g[a * k + b] = v;
            g[b * k + a] = v;
        }
    }
    cholesky_in_place(&mut g, k)?;
    let mut rhs: Vec<f64> = support
        .iter()
        .map(|&j| dot(p.design.row(j), &p.target) - p.lambda1)
        .collect();
    cholesky_solve(&g, k, &mut rhs);
    if rhs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let mut out = vec![0.0; theta.len()];
    for (&j, v) in support.iter().zip(rhs) {
        out[j] = v;
    }
    Some(out)
}

fn descend(p: &LassoProblem, allowed: &[usize], init: &[f64], max_sweeps: usize) -> (Vec<f64>, f64) {
    let n = p.num_candidates();
    let mut theta = vec![0.0; n];
    let mut r = p.target.clone();
    for &j in allowed {
        if init[j] > 0.0 {
            theta[j] = init[j];
            axpy(-init[j], p.design.row(j), &mut r);
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| norm_sq(p.design.row(j))).collect();
    let scale = allowed
        .iter()
        .map(|&j| dot(p.design.row(j), &p.target).abs())
        .fold(1.0, f64::max);
    let mut prev_obj = f64::INFINITY;
    for _ in 0..max_sweeps {
        for &j in allowed {
            if norms[j] == 0.0 {
                continue;
            }
            let row = p.design.row(j);
            let c = dot(row, &r);
            let new = (theta[j] + (c - p.lambda1) / norms[j]).max(0.0);
            if new != theta[j] {
                axpy(theta[j] - new, row, &mut r);
                theta[j] = new;
            }
        }
        let obj = 0.5 * norm_sq(&r) + p.lambda1 * theta.iter().sum::<f64>();
        let viol = allowed
            .iter()
            .map(|&j| {
                let c = dot(p.design.row(j), &r) - p.lambda1;
                if theta[j] > 0.0 {
                    c.abs()
                } else {
                    c.max(0.0)
                }
            })
            .fold(0.0, f64::max);
        let done = viol <= ORACLE_GRAD_TOL * scale && (prev_obj - obj).abs() < ORACLE_OBJ_TOL;
        prev_obj = obj;
        if done {
            break;
        }
    }
    let obj = p.objective_dense(&theta);
    (theta, obj)
}

/// Reference solver: projected coordinate descent to tight tolerances.
///
/// When the unrestricted optimum uses more than `max_active` candidates, a
/// support is grown greedily (each step adds the candidate whose restricted
/// re-solve gives the lowest objective) and the problem is re-solved on it.
pub fn solve_oracle(p: &LassoProblem) -> SparseSolution {
    let n = p.num_candidates();
    let all: Vec<usize> = (0..n).collect();
    let (theta, obj) = coordinate_descent(p, &all, &vec![0.0; n], ORACLE_MAX_SWEEPS);
    let nnz = theta.iter().filter(|&&t| t > 0.0).count();
    let max_active = p.max_active.max(1);
    if nnz <= max_active {
        return SparseSolution::from_dense(&theta, obj);
    }
    let mut support: Vec<usize> = Vec::new();
    let mut best = (vec![0.0; n], p.null_objective());
    for _ in 0..max_active {
        let mut round: Option<(usize, Vec<f64>, f64)> = None;
        for j in 0..n {
            if support.contains(&j) {
                continue;
            }
            let mut trial = support.clone();
            trial.push(j);
            trial.sort_unstable();
            let (t, o) = coordinate_descent(p, &trial, &vec![0.0; n], ORACLE_MAX_SWEEPS);
            if round.as_ref().is_none_or(|r| o < r.2) {
                round = Some((j, t, o));
            }
        }
        let Some((j, t, o)) = round else { break };
        support.push(j);
        support.sort_unstable();
        best = (t, o);
    }
    SparseSolution::from_dense(&best.0, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_problem(target: Vec<f64>, lambda1: f64) -> LassoProblem {
        let d = target.len();
        LassoProblem::new(DenseMatrix::identity(d), target, lambda1, d)
    }

    fn random_problem(rng: &mut ChaCha8Rng, p: usize, d: usize, lambda1: f64) -> LassoProblem {
        let design = DenseMatrix::from_fn(p, d, |_, _| rng.random_range(-1.0..1.0));
        let target = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        LassoProblem::new(design, target, lambda1, p)
    }

    #[test]
    fn identity_design_interpolates() {
        let p = identity_problem(vec![3.0, 1.0], 0.0);
        let s = solve_lars(&p);
        assert_eq!(s.nnz(), 2);
        assert!((s.entries[0].1 - 3.0).abs() < 1e-12);
        assert!((s.entries[1].1 - 1.0).abs() < 1e-12);
        assert!(s.objective.abs() < 1e-20);
    }

    #[test]
    fn identity_design_soft_thresholds() {
        let p = identity_problem(vec![3.0, 1.0], 2.0);
        let s = solve_lars(&p);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].0, 0);
        assert!((s.entries[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn large_penalty_gives_zero() {
        let p = identity_problem(vec![3.0, 1.0], 3.0);
        let s = solve_lars(&p);
        assert!(s.entries.is_empty());
        assert_eq!(s.objective, 5.0);
        assert_eq!(kkt_residual(&p, &s), 0.0);
    }

    #[test]
    fn zero_design_gives_empty_solution() {
        let p = LassoProblem::new(DenseMatrix::zeros(3, 2), vec![1.0, 2.0], 0.0, 3);
        let s = solve_lars(&p);
        assert!(s.entries.is_empty() && !s.used_fallback);
    }

    #[test]
    fn negative_correlations_never_enter() {
        let p = identity_problem(vec![-1.0, -2.0], 0.0);
        assert!(solve_lars(&p).entries.is_empty());
    }

    #[test]
    fn matches_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let lambda1 = [0.0, 0.1, 1.0][case % 3];
            let p = random_problem(&mut rng, 20, 6, lambda1);
            let a = solve_lars(&p);
            let b = solve_oracle(&p);
            let scale = p.null_objective().max(1e-12);
            assert!(
                (a.objective - b.objective).abs() <= 1e-6 * scale,
                "case {case}: lars {} oracle {}",
                a.objective,
                b.objective
            );
            assert!(kkt_residual(&p, &a) <= 1e-6);
        }
    }

    #[test]
    fn kkt_residual_detects_perturbation() {
        let p = identity_problem(vec![3.0, 1.0], 0.5);
        let mut s = solve_lars(&p);
        assert!(kkt_residual(&p, &s) <= 1e-9);
        s.entries[0].1 += 0.1;
        assert!(kkt_residual(&p, &s) >= 0.05);
    }

    #[test]
    fn oracle_all_zero_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_problem(&mut rng, 8, 4, 0.1);
        p.target = vec![0.0; 4];
        assert!(solve_oracle(&p).entries.is_empty());
        assert!(solve_lars(&p).entries.is_empty());
    }

    #[test]
    fn duplicate_rows_keep_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 6, 4, 0.1);
        let mut rows: Vec<Vec<f64>> = (0..6).map(|i| p.design.row(i).to_vec()).collect();
        rows.push(rows[0].clone());
        rows.push(rows[3].clone());
        let dup = LassoProblem::new(
            DenseMatrix::from_rows(&rows).unwrap(),
            p.target.clone(),
            p.lambda1,
            8,
        );
        let base = solve_oracle(&p).objective;
        assert!((solve_oracle(&dup).objective - base).abs() < 1e-9);
        assert!((solve_lars(&dup).objective - base).abs() < 1e-9);
    }

    #[test]
    fn max_active_caps_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut p = random_problem(&mut rng, 25, 8, 0.0);
            p.max_active = 3;
            let s = solve_lars(&p);
            assert!(s.nnz() <= 3);
            assert!(s.iterations <= 2 * 3 + s.drops + 1);
            let o = solve_oracle(&p);
            assert!(o.nnz() <= 3);
        }
    }

    #[test]
    fn scaling_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let p = random_problem(&mut rng, 12, 5, 0.2);
            let c = 3.5;
            let mut q = p.clone();
            q.target.iter_mut().for_each(|t| *t *= c);
            q.lambda1 *= c;
            let a = solve_lars(&p);
            let b = solve_lars(&q);
            assert_eq!(a.nnz(), b.nnz());
            for (x, y) in a.entries.iter().zip(&b.entries) {
                assert_eq!(x.0, y.0);
                assert!((x.1 * c - y.1).abs() <= 1e-9 * (1.0 + y.1.abs()));
            }
        }
    }
}
