//! Estimation of `(g, h)` from a rollout set: least-squares anchors `h_LS`
//! and `g_LS^(j)`, followed by a min-max refinement over all frequencies,
//! plus ordinary least-squares and FIR baselines.
//!
//! All rollout data enters through square-root factors of the augmented
//! rows `[Mᵀ | y]`, so every quadratic below is evaluated as `‖B v - d‖²`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{ArfiltError, Result};
use crate::linalg::{pinv_solve, SqrtAccumulator};
use crate::rollout::{build_regressor, Rollout, RolloutLabel, RolloutSet};
use crate::signal::Filter;

/// Least-squares solution read off a square-root factor.
#[derive(Clone, Debug, PartialEq)]
pub struct LsFit {
    pub x: DVector<f64>,
    pub rank: usize,
    /// `sigma_max / sigma_min_kept` of the design; infinite when degenerate.
    pub condition: f64,
    /// Root residual sum of squares at the solution.
    pub residual: f64,
}

impl LsFit {
    pub fn degenerate(&self) -> bool {
        self.rank == 0
    }
}

/// Solves `min ‖A x - y‖` given the triangular factor of `[A | y]`.
fn ls_from_factor(r_aug: &DMatrix<f64>, p: usize) -> LsFit {
    let r11 = r_aug.view((0, 0), (p, p)).into_owned();
    let rhs = r_aug.view((0, p), (p, 1)).column(0).into_owned();
    let sol = pinv_solve(&r11, &rhs);
    let fitted = &r11 * &sol.x - &rhs;
    let tail = r_aug[(p, p)];
    LsFit {
        residual: (fitted.norm_squared() + tail * tail).sqrt(),
        condition: sol.condition(),
        rank: sol.rank,
        x: sol.x,
    }
}

/// Square-root factor of all augmented rows, reduced in canonical label order.
fn factor_rollouts(rollouts: &[&Rollout], r: usize, include_x: bool) -> Result<SqrtAccumulator> {
    let width = if include_x { 2 * r + 1 } else { r + 1 };
    let mut sorted: Vec<&Rollout> = rollouts.to_vec();
    sorted.sort_by_key(|ro| ro.label);
    let parts = sorted
        .par_iter()
        .map(|ro| {
            let m = build_regressor(ro, r, include_x)?;
            let mut acc = SqrtAccumulator::new(width);
            acc.push_rows(&m.augmented_rows());
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = SqrtAccumulator::new(width);
    for part in &parts {
        acc.merge(part);
    }
    Ok(acc)
}

/// `h_LS = argmin_h sum_k ‖M^(0,k)ᵀ h - y^(0,k)‖²` over the zero-input rollouts.
pub fn solve_h_ls(zero: &SqrtAccumulator) -> LsFit {
    let r = zero.cols() - 1;
    ls_from_factor(zero.r(), r)
}

/// `g_LS^(j)` with `h` held at `h_ls`, from the factor of `[Xᵀ | Yᵀ | y]`.
pub fn solve_g_ls(freq: &SqrtAccumulator, h_ls: &DVector<f64>) -> LsFit {
    let r = h_ls.len();
    let f = freq.r();
    let r11 = f.view((0, 0), (r, r)).into_owned();
    let r12 = f.view((0, r), (r, r)).into_owned();
    let r13 = f.view((0, 2 * r), (r, 1)).column(0).into_owned();
    let rhs = &r13 - &r12 * h_ls;
    let sol = pinv_solve(&r11, &rhs);
    let r22 = f.view((r, r), (r, r)).into_owned();
    let r23 = f.view((r, 2 * r), (r, 1)).column(0).into_owned();
    let tail = f[(2 * r, 2 * r)];
    let res =
        (&r11 * &sol.x - &rhs).norm_squared() + (&r22 * h_ls - &r23).norm_squared() + tail * tail;
    LsFit {
        residual: res.sqrt(),
        condition: sol.condition(),
        rank: sol.rank,
        x: sol.x,
    }
}

/// Convex quadratic `‖B v - d‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub b: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Quadratic {
    /// `(v - c)ᵀ BᵀB (v - c)` in factored form.
    pub fn centered(b: DMatrix<f64>, center: &DVector<f64>) -> Self {
        let d = &b * center;
        Quadratic { b, d }
    }

    pub fn scaled(mut self, weight: f64) -> Self {
        let s = weight.sqrt();
        self.b *= s;
        self.d *= s;
        self
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        (&self.b * v - &self.d).norm_squared()
    }

    pub fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        self.b.transpose() * (&self.b * v - &self.d) * 2.0
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        self.b.transpose() * &self.b * 2.0
    }
}

/// Solver controls for [`MinMaxProblem::solve`].
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Smoothing levels as multiples of the initial objective.
    pub smoothing: Vec<f64>,
    pub polish_steps: usize,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub tie_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            smoothing: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            polish_steps: 200,
            rel_tol: 1e-9,
            max_iter: 100_000,
            tie_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOutcome {
    pub v: DVector<f64>,
    pub objective: f64,
    pub init_objective: f64,
    pub iterations: usize,
    /// Gradient norm of the last smoothed surrogate, relative to its initial value.
    pub stationarity: f64,
    pub converged: bool,
}

/// `min_v max_i q_i(v)` over a finite family of convex quadratics.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxProblem {
    pub dim: usize,
    pub terms: Vec<Quadratic>,
}

struct Smoothed {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl MinMaxProblem {
    pub fn new(dim: usize, terms: Vec<Quadratic>) -> Result<Self> {
        if terms
            .iter()
            .any(|q| q.b.ncols() != dim || q.b.nrows() != q.d.len())
        {
            return Err(ArfiltError::InvalidInput(
                "quadratic dimensions disagree".into(),
            ));
        }
        Ok(MinMaxProblem { dim, terms })
    }

    pub fn values(&self, v: &DVector<f64>) -> Vec<f64> {
        self.terms.iter().map(|q| q.value(v)).collect()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        self.values(v).into_iter().fold(0.0, f64::max)
    }

    fn softmax(values: &[f64], mu: f64) -> (f64, Vec<f64>) {
        let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = values.iter().map(|&q| ((q - m) / mu).exp()).collect();
        let s: f64 = e.iter().sum();
        (m + mu * s.ln(), e.into_iter().map(|w| w / s).collect())
    }

    fn smoothed_value(&self, v: &DVector<f64>, mu: f64) -> f64 {
        Self::softmax(&self.values(v), mu).0
    }

    fn smoothed(&self, v: &DVector<f64>, mu: f64) -> Smoothed {
        let (value, w) = Self::softmax(&self.values(v), mu);
        let n = self.dim;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut outer = DMatrix::zeros(n, n);
        for (q, &wi) in self.terms.iter().zip(&w) {
            if wi == 0.0 {
                continue;
            }
            let gi = q.gradient(v);
            hess += q.hessian() * wi;
            outer += &gi * gi.transpose() * wi;
            grad += gi * wi;
        }
        hess += (outer - &grad * grad.transpose()) / mu;
        Smoothed { value, grad, hess }
    }

    /// Averaged gradient of the terms within `tie_tol` of the max.
    fn subgradient(&self, v: &DVector<f64>, tie_tol: f64) -> DVector<f64> {
        let vals = self.values(v);
        let m = vals.iter().copied().fold(0.0, f64::max);
        let mut g = DVector::zeros(self.dim);
        let mut count = 0;
        for (q, &val) in self.terms.iter().zip(&vals) {
            if val >= m - tie_tol {
                g += q.gradient(v);
                count += 1;
            }
        }
        if count > 0 {
            g /= count as f64;
        }
        g
    }

    /// Annealed log-sum-exp smoothing with damped Newton steps, then
    /// subgradient polishing. The returned point is the best visited.
    pub fn solve(&self, init: &DVector<f64>, opts: &SolverOptions) -> SolverOutcome {
        let init_objective = self.objective(init);
        let mut best = init.clone();
        let mut best_obj = init_objective;
        let mut iterations = 0usize;
        let mut stationarity = 0.0;
        let mut converged = true;
        if self.terms.is_empty() || init_objective == 0.0 {
            return SolverOutcome {
                v: best,
                objective: best_obj,
                init_objective,
                iterations,
                stationarity,
                converged,
            };
        }
        let mut v = init.clone();
        for &level in &opts.smoothing {
            let mu = level * init_objective;
            let mut s = self.smoothed(&v, mu);
            let g0 = s.grad.norm().max(f64::MIN_POSITIVE);
            let mut stage_done = false;
            while iterations < opts.max_iter {
                iterations += 1;
                let lambda = 1e-12 * s.hess.trace().abs().max(f64::MIN_POSITIVE);
                let h = &s.hess + DMatrix::identity(self.dim, self.dim) * lambda;
                let mut dir = match h.cholesky() {
                    Some(ch) => -ch.solve(&s.grad),
                    None => -s.grad.clone(),
                };
                if dir.dot(&s.grad) >= 0.0 || !dir.iter().all(|x| x.is_finite()) {
                    dir = -s.grad.clone();
                }
                let slope = dir.dot(&s.grad);
                let mut step = 1.0;
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = &v + &dir * step;
                    let f = self.smoothed_value(&cand, mu);
                    if f <= s.value + 1e-4 * step * slope {
                        accepted = Some((cand, f));
                        break;
                    }
                    step *= 0.5;
                }
                let Some((cand, f)) = accepted else {
                    stage_done = true;
                    break;
                };
                let improvement = s.value - f;
                v = cand;
                let obj = self.objective(&v);
                if obj < best_obj {
                    best_obj = obj;
                    best = v.clone();
                }
                s = self.smoothed(&v, mu);
                let decrement = -slope;
                if improvement <= opts.rel_tol * f.abs() * 1e-3
                    || decrement <= 1e-24 * init_objective
                {
                    stage_done = true;
                    break;
                }
            }
            stationarity = s.grad.norm() / g0;
            if !stage_done {
                converged = false;
                break;
            }
        }
        let mut v = best.clone();
        let mut obj = best_obj;
        for _ in 0..opts.polish_steps {
            if iterations >= opts.max_iter || obj == 0.0 {
                break;
            }
            iterations += 1;
            let g = self.subgradient(&v, opts.tie_tol);
            let gn2 = g.norm_squared();
            if gn2 == 0.0 {
                break;
            }
            let mut step = obj / gn2;
            let mut improved = false;
            for _ in 0..40 {
                let cand = &v - &g * step;
                let f = self.objective(&cand);
                if f < obj {
                    v = cand;
                    obj = f;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if obj < best_obj {
            best_obj = obj;
            best = v;
        }
        SolverOutcome {
            v: best,
            objective: best_obj,
            init_objective,
            iterations,
            stationarity,
            converged,
        }
    }
}

/// Square-root factors and least-squares anchors of one rollout set.
#[derive(Clone, Debug)]
pub struct EstimationContext {
    pub r: usize,
    pub zero: SqrtAccumulator,
    pub freq: BTreeMap<usize, SqrtAccumulator>,
    pub h_ls: LsFit,
    pub g_ls: BTreeMap<usize, LsFit>,
}

impl EstimationContext {
    pub fn from_set(set: &RolloutSet) -> Result<Self> {
        Self::from_rollouts(&set.rollouts, set.design.r)
    }

    pub fn from_rollouts(rollouts: &[Rollout], r: usize) -> Result<Self> {
        if r == 0 {
            return Err(ArfiltError::InvalidInput(
                "filter length must be positive".into(),
            ));
        }
        let zeros: Vec<&Rollout> = rollouts
            .iter()
            .filter(|ro| matches!(ro.label, RolloutLabel::Zero { .. }))
            .collect();
        if zeros.is_empty() {
            return Err(ArfiltError::InvalidInput("no zero-input rollouts".into()));
        }
        let mut by_freq: BTreeMap<usize, Vec<&Rollout>> = BTreeMap::new();
        for ro in rollouts {
            if let Some(j) = ro.label.frequency_index() {
                by_freq.entry(j).or_default().push(ro);
            }
        }
        let zero = factor_rollouts(&zeros, r, false)?;
        let h_ls = solve_h_ls(&zero);
        let mut freq = BTreeMap::new();
        let mut g_ls = BTreeMap::new();
        for (j, ros) in by_freq {
            let acc = factor_rollouts(&ros, r, true)?;
            g_ls.insert(j, solve_g_ls(&acc, &h_ls.x));
            freq.insert(j, acc);
        }
        Ok(EstimationContext {
            r,
            zero,
            freq,
            h_ls,
            g_ls,
        })
    }

    /// `(mean_j g_LS^(j), h_LS)`.
    pub fn init_point(&self) -> DVector<f64> {
        let r = self.r;
        let mut v = DVector::zeros(2 * r);
        if !self.g_ls.is_empty() {
            for fit in self.g_ls.values() {
                let mut head = v.rows_mut(0, r);
                head += &fit.x;
            }
            v.rows_mut(0, r).scale_mut(1.0 / self.g_ls.len() as f64);
        }
        v.rows_mut(r, r).copy_from(&self.h_ls.x);
        v
    }

    /// The zero-input term `(1/r)‖R0 (h - h_LS)‖²` followed by one term per frequency.
    pub fn problem(&self) -> MinMaxProblem {
        let r = self.r;
        let mut terms = Vec::with_capacity(1 + self.freq.len());
        let mut b0 = DMatrix::zeros(r, 2 * r);
        b0.view_mut((0, r), (r, r))
            .copy_from(&self.zero.r().view((0, 0), (r, r)));
        let mut c0 = DVector::zeros(2 * r);
        c0.rows_mut(r, r).copy_from(&self.h_ls.x);
        terms.push(Quadratic::centered(b0, &c0).scaled(1.0 / r as f64));
        for (j, acc) in &self.freq {
            let b = acc.r().view((0, 0), (2 * r, 2 * r)).into_owned();
            let mut c = DVector::zeros(2 * r);
            c.rows_mut(0, r).copy_from(&self.g_ls[j].x);
            c.rows_mut(r, r).copy_from(&self.h_ls.x);
            terms.push(Quadratic::centered(b, &c));
        }
        MinMaxProblem { dim: 2 * r, terms }
    }
}

fn stack(g: &Filter, h: &Filter, r: usize) -> Result<DVector<f64>> {
    if g.len() != r || h.len() != r {
        return Err(ArfiltError::InvalidInput(format!(
            "filters must have length {r}, got {} and {}",
            g.len(),
            h.len()
        )));
    }
    Ok(DVector::from_iterator(
        2 * r,
        g.coeffs().iter().chain(h.coeffs()).copied(),
    ))
}

fn split(v: &DVector<f64>, r: usize) -> (Filter, Filter) {
    (
        Filter::from_trusted(v.rows(0, r).iter().copied().collect()),
        Filter::from_trusted(v.rows(r, r).iter().copied().collect()),
    )
}

/// Min-max objective at `(g, h)`.
pub fn minmax_objective(ctx: &EstimationContext, g: &Filter, h: &Filter) -> Result<f64> {
    Ok(ctx.problem().objective(&stack(g, h, ctx.r)?))
}

/// Learned filters together with the anchors and solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub g: Filter,
    pub h: Filter,
    pub h_ls: Filter,
    pub g_ls_per_freq: BTreeMap<usize, Filter>,
    pub minmax_objective: f64,
    pub init_objective: f64,
    pub solver_iters: usize,
    pub converged: bool,
    pub diagnostics: BTreeMap<String, f64>,
}

pub fn minmax_refine(ctx: &EstimationContext, opts: &SolverOptions) -> EstimationResult {
    let problem = ctx.problem();
    let init = ctx.init_point();
    let out = problem.solve(&init, opts);
    let (g, h) = split(&out.v, ctx.r);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("h_ls_rank".into(), ctx.h_ls.rank as f64);
    diagnostics.insert("h_ls_condition".into(), ctx.h_ls.condition);
    diagnostics.insert("h_ls_residual".into(), ctx.h_ls.residual);
    diagnostics.insert(
        "h_ls_degenerate".into(),
        if ctx.h_ls.degenerate() { 1.0 } else { 0.0 },
    );
    let max_g_cond = ctx
        .g_ls
        .values()
        .filter(|f| !f.degenerate())
        .map(|f| f.condition)
        .fold(0.0, f64::max);
    diagnostics.insert("g_ls_max_condition".into(), max_g_cond);
    diagnostics.insert(
        "g_ls_max_residual".into(),
        ctx.g_ls.values().map(|f| f.residual).fold(0.0, f64::max),
    );
    diagnostics.insert("stationarity".into(), out.stationarity);
    diagnostics.insert("terms".into(), problem.terms.len() as f64);
    EstimationResult {
        g,
        h,
        h_ls: Filter::from_trusted(ctx.h_ls.x.iter().copied().collect()),
        g_ls_per_freq: ctx
            .g_ls
            .iter()
            .map(|(&j, f)| (j, Filter::from_trusted(f.x.iter().copied().collect())))
            .collect(),
        minmax_objective: out.objective,
        init_objective: out.init_objective,
        solver_iters: out.iterations,
        converged: out.converged,
        diagnostics,
    }
}

/// Full pipeline: anchors, then min-max refinement with default options.
pub fn estimate(set: &RolloutSet) -> Result<EstimationResult> {
    let ctx = EstimationContext::from_set(set)?;
    Ok(minmax_refine(&ctx, &SolverOptions::default()))
}

/// Joint least squares of `[g; h]` over every rollout.
pub fn ordinary_ls_baseline(rollouts: &[Rollout], r: usize) -> Result<(Filter, Filter)> {
    let all: Vec<&Rollout> = rollouts.iter().collect();
    let acc = factor_rollouts(&all, r, true)?;
    let fit = ls_from_factor(acc.r(), 2 * r);
    Ok(split(&fit.x, r))
}

/// Least squares of `y(t)` on `x(t-1), ..., x(t-r_fir)` only.
pub fn fir_ls_baseline(rollouts: &[Rollout], r_fir: usize) -> Result<Filter> {
    if r_fir == 0 {
        return Err(ArfiltError::InvalidInput(
            "FIR length must be positive".into(),
        ));
    }
    let mut sorted: Vec<&Rollout> = rollouts.iter().collect();
    sorted.sort_by_key(|ro| ro.label);
    let parts: Vec<SqrtAccumulator> = sorted
        .par_iter()
        .map(|ro| {
            let t_len = ro.t_len();
            let mut rows = DMatrix::zeros(t_len, r_fir + 1);
            for t in 1..=t_len {
                for i in 0..r_fir {
                    rows[(t - 1, i)] = ro.x_at(t as i64 - 1 - i as i64);
                }
                rows[(t - 1, r_fir)] = ro.y_at(t as i64);
            }
            let mut acc = SqrtAccumulator::new(r_fir + 1);
            acc.push_rows(&rows);
            acc
        })
        .collect();
    let mut acc = SqrtAccumulator::new(r_fir + 1);
    for p in &parts {
        acc.merge(p);
    }
    let fit = ls_from_factor(acc.r(), r_fir);
    Ok(Filter::from_trusted(fit.x.iter().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{generate_rollouts, BurnIn, DesignConfig};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filt(c: &[f64]) -> Filter {
        Filter::new(c.to_vec()).unwrap()
    }

    fn acc_from_rows(rows: &[&[f64]]) -> SqrtAccumulator {
        let w = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), w, |i, j| rows[i][j]);
        let mut acc = SqrtAccumulator::new(w);
        acc.push_rows(&m);
        acc
    }

    #[test]
    fn h_ls_scalar_closed_form() {
        let fit = solve_h_ls(&acc_from_rows(&[&[1.0, 2.0], &[2.0, 3.0]]));
        assert_abs_diff_eq!(fit.x[0], 1.6, epsilon = 1e-12);
        let dup = solve_h_ls(&acc_from_rows(&[
            &[1.0, 2.0],
            &[2.0, 3.0],
            &[1.0, 2.0],
            &[2.0, 3.0],
        ]));
        assert_abs_diff_eq!(dup.x[0], 1.6, epsilon = 1e-12);
        let zero = solve_h_ls(&acc_from_rows(&[&[0.0, 0.0], &[0.0, 0.0]]));
        assert!(zero.degenerate());
        assert_eq!(zero.x[0], 0.0);
    }

    #[test]
    fn h_ls_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h0 = [0.4, -0.2, 0.1];
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = a.iter().zip(&h0).map(|(x, h)| x * h).sum();
                a.into_iter().chain([y]).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let fit = solve_h_ls(&acc_from_rows(&refs));
        for i in 0..3 {
            assert_abs_diff_eq!(fit.x[i], h0[i], epsilon = 1e-10);
        }
        assert!(fit.residual < 1e-10);
    }

    fn zero_noise_set(sigma: f64, ell: usize) -> (RolloutSet, Filter, Filter) {
        let g = filt(&[1.0, 0.5, -0.3, 0.2]);
        let h = filt(&[0.5, -0.2, 0.1, 0.05]);
        let cfg = DesignConfig::new(4, 26.0, ell, sigma, 5).with_burn_in(BurnIn::Fixed(300));
        (generate_rollouts(&cfg, &g, &h).unwrap(), g, h)
    }

    #[test]
    fn g_ls_matches_projection_with_true_h() {
        let (set, g, h) = zero_noise_set(0.0, 1);
        let ctx = EstimationContext::from_set(&set).unwrap();
        let hv = DVector::from_column_slice(h.coeffs());
        for j in [0usize, 3, 20, 52] {
            let fit = solve_g_ls(&ctx.freq[&j], &hv);
            let w = set.design.frequency(j);
            // compare the frequency responses at w, which fix P_X g
            let resp = |c: &[f64]| {
                c.iter()
                    .enumerate()
                    .fold(num_complex::Complex64::new(0.0, 0.0), |s, (k, &v)| {
                        s + num_complex::Complex64::from_polar(v, -w * k as f64)
                    })
            };
            let d = resp(fit.x.as_slice()) - resp(g.coeffs());
            assert!(d.norm() < 1e-8, "j = {j}: {d}");
        }
        let fit0 = solve_g_ls(&ctx.freq[&0], &hv);
        assert_eq!(fit0.rank, 1);
    }

    #[test]
    fn duplicated_rollouts_keep_anchors() {
        let (set, _, _) = zero_noise_set(1.0, 1);
        let mut dup = set.rollouts.clone();
        for ro in &set.rollouts {
            let mut c = ro.clone();
            c.label = match ro.label {
                RolloutLabel::Zero { k } => RolloutLabel::Zero { k: k + 100_000 },
                RolloutLabel::Cos { j, k } => RolloutLabel::Cos { j, k: k + 100 },
                RolloutLabel::Sin { j, k } => RolloutLabel::Sin { j, k: k + 100 },
            };
            dup.push(c);
        }
        let a = EstimationContext::from_rollouts(&set.rollouts, 4).unwrap();
        let b = EstimationContext::from_rollouts(&dup, 4).unwrap();
        assert!((&a.h_ls.x - &b.h_ls.x).amax() < 1e-10);
        for j in a.g_ls.keys() {
            assert!((&a.g_ls[j].x - &b.g_ls[j].x).amax() < 1e-9);
        }
        let v = a.init_point();
        let (ga, ha) = (a.problem().objective(&v), b.problem().objective(&v));
        assert_abs_diff_eq!(ha, 2.0 * ga, epsilon = 1e-9 * ga.max(1.0));
    }

    #[test]
    fn objective_definition_examples() {
        let (set, _, _) = zero_noise_set(1.0, 1);
        let ctx = EstimationContext::from_set(&set).unwrap();
        let p = ctx.problem();
        assert_eq!(p.terms.len(), 1 + 53);
        let vals_init = p.values(&ctx.init_point());
        let jstar = 1 + vals_init[1..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let j = *ctx.g_ls.keys().nth(jstar - 1).unwrap();
        let g = filt(ctx.g_ls[&j].x.as_slice());
        let h = filt(ctx.h_ls.x.as_slice());
        let v = stack(&g, &h, 4).unwrap();
        let vals = p.values(&v);
        assert!(vals[jstar] < 1e-18 * vals.iter().copied().fold(1.0, f64::max));
        let others = vals
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != jstar)
            .map(|(_, &x)| x)
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(
            minmax_objective(&ctx, &g, &h).unwrap(),
            others,
            epsilon = 1e-9
        );
    }

    #[test]
    fn identical_anchors_give_zero() {
        let c = DVector::from_vec(vec![0.3, -0.7]);
        let terms = (0..3)
            .map(|i| {
                let b = DMatrix::from_fn(2, 2, |a, bb| ((a + 2 * bb + i) as f64).cos());
                Quadratic::centered(b, &c)
            })
            .collect();
        let p = MinMaxProblem::new(2, terms).unwrap();
        assert_abs_diff_eq!(p.objective(&c), 0.0, epsilon = 1e-28);
        let out = p.solve(&c, &SolverOptions::default());
        assert_eq!(out.objective, 0.0);
    }

    #[test]
    fn symmetric_toy_minimizer() {
        let a: f64 = 3.0;
        let terms = vec![
            Quadratic::centered(
                DMatrix::from_element(1, 1, a.sqrt()),
                &DVector::from_element(1, 1.0),
            ),
            Quadratic::centered(
                DMatrix::from_element(1, 1, a.sqrt()),
                &DVector::from_element(1, -1.0),
            ),
        ];
        let p = MinMaxProblem::new(1, terms).unwrap();
        let out = p.solve(&DVector::from_element(1, 0.7), &SolverOptions::default());
        assert!(out.v[0].abs() < 1e-6, "{}", out.v[0]);
        assert!(out.objective <= out.init_objective);
        assert_abs_diff_eq!(out.objective, a, epsilon = 1e-5);
    }

    #[test]
    fn single_term_matches_least_squares() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 2.0, 0.5, 0.5]);
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let p = MinMaxProblem::new(2, vec![Quadratic::centered(b, &c)]).unwrap();
        let out = p.solve(&DVector::zeros(2), &SolverOptions::default());
        assert!((&out.v - &c).amax() < 1e-8);
    }

    #[test]
    fn grid_search_certificate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let terms: Vec<Quadratic> = (0..3)
                .map(|_| {
                    let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
                    let c = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                    Quadratic::centered(b, &c)
                })
                .collect();
            let p = MinMaxProblem::new(2, terms).unwrap();
            let out = p.solve(&DVector::zeros(2), &SolverOptions::default());
            // coarse grid then a refined grid around the coarse winner
            let mut best = (f64::INFINITY, 0.0, 0.0);
            let n = 400;
            for i in 0..=n {
                for k in 0..=n {
                    let v = DVector::from_vec(vec![
                        -2.0 + 4.0 * i as f64 / n as f64,
                        -2.0 + 4.0 * k as f64 / n as f64,
                    ]);
                    let f = p.objective(&v);
                    if f < best.0 {
                        best = (f, v[0], v[1]);
                    }
                }
            }
            let (_, cx, cy) = best;
            let step = 4.0 / n as f64;
            for i in 0..=n {
                for k in 0..=n {
                    let v = DVector::from_vec(vec![
                        cx - step + 2.0 * step * i as f64 / n as f64,
                        cy - step + 2.0 * step * k as f64 / n as f64,
                    ]);
                    best.0 = best.0.min(p.objective(&v));
                }
            }
            assert!(
                out.objective <= best.0 + 1e-6,
                "trial {trial}: {} vs {}",
                out.objective,
                best.0
            );
        }
    }

    #[test]
    fn zero_noise_recovery() {
        let (set, g, h) = zero_noise_set(0.0, 1);
        let res = estimate(&set).unwrap();
        assert_eq!(res.diagnostics["h_ls_degenerate"], 1.0);
        assert!(res.minmax_objective <= 1e-12, "{}", res.minmax_objective);
        assert!(res.minmax_objective <= res.init_objective);
        assert!(res.g.sub(&g).max_abs() < 1e-8, "{:?}", res.g);
        assert!(res.h.sub(&h).max_abs() < 1e-8, "{:?}", res.h);
    }

    #[test]
    fn monotone_and_permutation_invariant() {
        let (set, _, _) = zero_noise_set(1.0, 1);
        let a = estimate(&set).unwrap();
        assert!(a.minmax_objective <= a.init_objective);
        let mut shuffled = set.clone();
        shuffled.rollouts.reverse();
        shuffled.rollouts.swap(3, 70);
        let b = estimate(&shuffled).unwrap();
        assert!(a.g.sub(&b.g).max_abs() <= 1e-10);
        assert!(a.h.sub(&b.h).max_abs() <= 1e-10);
        assert!(
            (a.minmax_objective - b.minmax_objective).abs() <= 1e-10 * a.minmax_objective.max(1.0)
        );
    }

    #[test]
    fn json_round_trip() {
        let (set, _, _) = zero_noise_set(1.0, 1);
        let a = estimate(&set).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        let b: EstimationResult = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn baselines() {
        let (set, g, h) = zero_noise_set(0.0, 1);
        let (go, ho) = ordinary_ls_baseline(&set.rollouts, 4).unwrap();
        assert!(go.sub(&g).max_abs() < 1e-8);
        assert!(ho.sub(&h).max_abs() < 1e-8);
        let zeros: Vec<Rollout> = set.zero_rollouts().cloned().collect();
        let (gz, _) = ordinary_ls_baseline(&zeros, 4).unwrap();
        assert!(gz.is_zero());

        let gf = filt(&[1.0, -0.5, 0.25]);
        let cfg = DesignConfig::new(3, 26.0, 1, 0.0, 1);
        let fir_set = generate_rollouts(&cfg, &gf, &filt(&[0.0])).unwrap();
        let est = fir_ls_baseline(&fir_set.rollouts, 3).unwrap();
        assert!(est.sub(&gf).max_abs() < 1e-10);
        let est_zero = fir_ls_baseline(&zeros, 2).unwrap();
        assert!(est_zero.is_zero());
    }
}
