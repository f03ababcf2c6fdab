//! Experiment design and rollout simulation for the autoregressive model
//! `y(t+1) = (g* * x)(t) + (h* * y)(t) + eta(t+1)`.
//!
//! Every rollout runs on `t = -L .. T` with `x(t) = 0` before `-L` and
//! `y(t) = 0` at and before `-L`. Inputs are either identically zero or a
//! cosine/sine at one of the equispaced frequencies `2 pi j / (c r)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ArfiltError, Result};
use crate::signal::{self, Filter};

/// Threshold on `|y|` beyond which a simulation is aborted as divergent.
pub const OVERFLOW_LIMIT: f64 = 1e12;
/// Tail tolerance of `H*_unr` used for the default burn-in.
pub const AUTO_BURN_IN_EPS: f64 = 1e-6;

/// How the burn-in length `L` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIn {
    /// `max(r, R_{H*_unr}(1e-6))`.
    #[default]
    Auto,
    Fixed(usize),
    /// The theorem-grade length of [`required_burn_in`] at failure probability `delta`.
    Theorem {
        delta: f64,
    },
}

/// Hyperparameters of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Learned filter length.
    pub r: usize,
    /// Frequency-density factor; rounded up to an even integer.
    pub c: f64,
    /// Rollouts per designed input.
    pub ell: usize,
    #[serde(default)]
    pub burn_in: BurnIn,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl DesignConfig {
    pub fn new(r: usize, c: f64, ell: usize, sigma: f64, seed: u64) -> Self {
        DesignConfig {
            r,
            c,
            ell,
            burn_in: BurnIn::Auto,
            sigma,
            seed,
        }
    }

    pub fn with_burn_in(mut self, burn_in: BurnIn) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(ArfiltError::Config(
                "filter length r must be positive".into(),
            ));
        }
        if !(self.c >= 8.0 * PI) || !self.c.is_finite() {
            return Err(ArfiltError::Config(format!(
                "frequency factor c must be at least 8 pi, got {}",
                self.c
            )));
        }
        if self.ell == 0 {
            return Err(ArfiltError::Config("ell must be positive".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(ArfiltError::Config(format!(
                "noise level must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        match self.burn_in {
            BurnIn::Fixed(l) if l < self.r => Err(ArfiltError::InsufficientHistory {
                burn_in: l,
                r: self.r,
            }),
            BurnIn::Theorem { delta } if !(delta > 0.0 && delta < 1.0) => Err(ArfiltError::Config(
                format!("delta must lie in (0, 1), got {delta}"),
            )),
            _ => Ok(()),
        }
    }

    /// `c` rounded up to the next even integer.
    pub fn c_int(&self) -> usize {
        let c = self.c.ceil() as usize;
        c + c % 2
    }

    /// Rollout length `T = c_int r`.
    pub fn t_len(&self) -> usize {
        self.c_int() * self.r
    }

    /// Largest frequency index `c_int r / 2`.
    pub fn max_frequency(&self) -> usize {
        self.t_len() / 2
    }

    pub fn frequency(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.t_len() as f64
    }

    pub fn zero_rollouts(&self) -> usize {
        self.c_int() * self.ell * self.r
    }

    /// Burn-in length for the given true system.
    pub fn resolve_burn_in(&self, g_star: &Filter, h_star: &Filter) -> Result<usize> {
        Ok(match self.burn_in {
            BurnIn::Fixed(l) => l,
            BurnIn::Auto => self.r.max(signal::unrolled_sufficient_length(
                h_star,
                None,
                AUTO_BURN_IN_EPS,
            )?),
            BurnIn::Theorem { delta } => self
                .r
                .max(required_burn_in(h_star, g_star, self, delta)?.length),
        })
    }
}

/// Which designed input a rollout received. `k` counts from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutLabel {
    Zero { k: usize },
    Cos { j: usize, k: usize },
    Sin { j: usize, k: usize },
}

impl RolloutLabel {
    /// Injective 64-bit encoding (tag in the top two bits, `j` and `k` below).
    pub fn code(&self) -> u64 {
        let (tag, j, k) = match *self {
            RolloutLabel::Zero { k } => (0u64, 0usize, k),
            RolloutLabel::Cos { j, k } => (1, j, k),
            RolloutLabel::Sin { j, k } => (2, j, k),
        };
        (tag << 62) | ((j as u64 & 0x7fff_ffff) << 31) | (k as u64 & 0x7fff_ffff)
    }

    /// File stem used when persisting.
    pub fn file_stem(&self) -> String {
        match *self {
            RolloutLabel::Zero { k } => format!("zero_{k:06}"),
            RolloutLabel::Cos { j, k } => format!("cos_{j:05}_{k:06}"),
            RolloutLabel::Sin { j, k } => format!("sin_{j:05}_{k:06}"),
        }
    }

    pub fn frequency_index(&self) -> Option<usize> {
        match *self {
            RolloutLabel::Zero { .. } => None,
            RolloutLabel::Cos { j, .. } | RolloutLabel::Sin { j, .. } => Some(j),
        }
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise seed of a rollout: `splitmix64(master + splitmix64(label.code()))`.
/// Injective over labels for a fixed master seed.
pub fn rollout_seed(master: u64, label: &RolloutLabel) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(label.code())))
}

/// Seeds derived for independent sub-experiments (e.g. one per Monte-Carlo trial).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

/// `cos(2 pi j t / n)` with the phase reduced modulo `n` first.
fn grid_cos(j: usize, t: i64, n: usize) -> f64 {
    let phase = (j as i64 * t).rem_euclid(n as i64) as f64;
    (2.0 * PI * phase / n as f64).cos()
}

fn grid_sin(j: usize, t: i64, n: usize) -> f64 {
    let phase = (j as i64 * t).rem_euclid(n as i64) as f64;
    (2.0 * PI * phase / n as f64).sin()
}

/// Designed inputs on `t = -L .. T-1`, in canonical label order: all zero
/// inputs, then cosines by `(j, k)`, then sines by `(j, k)`.
pub fn design_inputs(cfg: &DesignConfig, burn_in: usize) -> Vec<(RolloutLabel, Vec<f64>)> {
    let n = cfg.t_len();
    let times = -(burn_in as i64)..n as i64;
    let len = burn_in + n;
    let mut out = Vec::new();
    for k in 1..=cfg.zero_rollouts() {
        out.push((RolloutLabel::Zero { k }, vec![0.0; len]));
    }
    for j in 0..=cfg.max_frequency() {
        let x: Vec<f64> = times.clone().map(|t| grid_cos(j, t, n)).collect();
        for k in 1..=cfg.ell {
            out.push((RolloutLabel::Cos { j, k }, x.clone()));
        }
    }
    for j in 0..=cfg.max_frequency() {
        let x: Vec<f64> = times.clone().map(|t| grid_sin(j, t, n)).collect();
        for k in 1..=cfg.ell {
            out.push((RolloutLabel::Sin { j, k }, x.clone()));
        }
    }
    out
}

/// Runs the autoregressive recursion. `x[i] = x(-L + i)` and the returned
/// `y[i] = y(-L + 1 + i)`; history before the start is zero.
pub fn simulate_ar(
    g_star: &Filter,
    h_star: &Filter,
    sigma: f64,
    x: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    crate::error::ensure_finite(x, "input")?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ArfiltError::InvalidInput(format!(
            "invalid noise level {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = g_star.coeffs();
    let h = h_star.coeffs();
    let mut y = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut v = 0.0;
        for (k, &gk) in g.iter().enumerate().take(i + 1) {
            v += gk * x[i - k];
        }
        for (k, &hk) in h.iter().enumerate().take(i) {
            v += hk * y[i - 1 - k];
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        v += sigma * e;
        if !(v.abs() <= OVERFLOW_LIMIT) {
            return Err(ArfiltError::Overflow { step: i, value: v });
        }
        y.push(v);
    }
    Ok(y)
}

/// One simulated rollout on `t = -L .. T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub label: RolloutLabel,
    /// `x(-L) .. x(T-1)`.
    pub x: Vec<f64>,
    /// `y(-L+1) .. y(T)`.
    pub y: Vec<f64>,
    pub noise_seed: u64,
    pub burn_in: usize,
}

impl Rollout {
    pub fn t_len(&self) -> usize {
        self.x.len() - self.burn_in
    }

    /// `x(t)`, zero outside the simulated range.
    pub fn x_at(&self, t: i64) -> f64 {
        let i = t + self.burn_in as i64;
        if i >= 0 && (i as usize) < self.x.len() {
            self.x[i as usize]
        } else {
            0.0
        }
    }

    /// `y(t)`, zero at and before `-L`.
    pub fn y_at(&self, t: i64) -> f64 {
        let i = t + self.burn_in as i64 - 1;
        if i >= 0 && (i as usize) < self.y.len() {
            self.y[i as usize]
        } else {
            0.0
        }
    }
}

/// All rollouts of one experiment together with the system that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSet {
    pub design: DesignConfig,
    pub burn_in: usize,
    pub g_star: Filter,
    pub h_star: Filter,
    pub rollouts: Vec<Rollout>,
}

impl RolloutSet {
    pub fn zero_rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.rollouts
            .iter()
            .filter(|r| matches!(r.label, RolloutLabel::Zero { .. }))
    }

    /// Cosine and sine rollouts at frequency `j`.
    pub fn frequency_rollouts(&self, j: usize) -> impl Iterator<Item = &Rollout> {
        self.rollouts
            .iter()
            .filter(move |r| r.label.frequency_index() == Some(j))
    }

    /// Rollouts in canonical (sorted-by-label) order.
    pub fn canonicalize(&mut self) {
        self.rollouts.sort_by_key(|r| r.label);
    }
}

/// Simulates every designed input with its own derived noise seed.
///
/// Rollouts are generated in parallel; results do not depend on scheduling.
pub fn generate_rollouts(
    cfg: &DesignConfig,
    g_star: &Filter,
    h_star: &Filter,
) -> Result<RolloutSet> {
    cfg.validate()?;
    let burn_in = cfg.resolve_burn_in(g_star, h_star)?;
    if burn_in < cfg.r {
        return Err(ArfiltError::InsufficientHistory { burn_in, r: cfg.r });
    }
    let rollouts = design_inputs(cfg, burn_in)
        .into_par_iter()
        .map(|(label, x)| {
            let noise_seed = rollout_seed(cfg.seed, &label);
            let y = simulate_ar(g_star, h_star, cfg.sigma, &x, noise_seed)?;
            Ok(Rollout {
                label,
                x,
                y,
                noise_seed,
                burn_in,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RolloutSet {
        design: cfg.clone(),
        burn_in,
        g_star: g_star.clone(),
        h_star: h_star.clone(),
        rollouts,
    })
}

/// Regression columns `[x(t-1:t-r); y(t-1:t-r)]` (or only the `y` part) for
/// `t = 1..T`, together with the targets `y(1..T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorMatrix {
    /// `(2r or r) x T`.
    pub columns: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub include_x: bool,
}

impl RegressorMatrix {
    pub fn t_len(&self) -> usize {
        self.columns.ncols()
    }

    /// Column for time `t` (1-based).
    pub fn column(&self, t: usize) -> DVector<f64> {
        self.columns.column(t - 1).into_owned()
    }

    /// Stacked least-squares rows `[Mᵀ | targets]`, `T x (rows + 1)`.
    pub fn augmented_rows(&self) -> DMatrix<f64> {
        let p = self.columns.nrows();
        let t = self.columns.ncols();
        let mut a = DMatrix::zeros(t, p + 1);
        a.view_mut((0, 0), (t, p))
            .copy_from(&self.columns.transpose());
        a.set_column(p, &self.targets);
        a
    }
}

pub fn build_regressor(rollout: &Rollout, r: usize, include_x: bool) -> Result<RegressorMatrix> {
    if rollout.burn_in < r {
        return Err(ArfiltError::InsufficientHistory {
            burn_in: rollout.burn_in,
            r,
        });
    }
    let t_len = rollout.t_len();
    let rows = if include_x { 2 * r } else { r };
    let y_off = if include_x { r } else { 0 };
    let mut m = DMatrix::zeros(rows, t_len);
    let mut targets = DVector::zeros(t_len);
    for t in 1..=t_len {
        let ti = t as i64;
        for i in 0..r {
            let s = ti - 1 - i as i64;
            if include_x {
                m[(i, t - 1)] = rollout.x_at(s);
            }
            m[(y_off + i, t - 1)] = rollout.y_at(s);
        }
        targets[t - 1] = rollout.y_at(ti);
    }
    Ok(RegressorMatrix {
        columns: m,
        targets,
        include_x,
    })
}

/// `sum M Mᵀ` over the given matrices; the zero `dim x dim` matrix when empty.
pub fn gram(matrices: &[RegressorMatrix], dim: usize) -> Result<DMatrix<f64>> {
    let mut q = DMatrix::zeros(dim, dim);
    for m in matrices {
        if m.columns.nrows() != dim {
            return Err(ArfiltError::InvalidInput(format!(
                "regressor has {} rows, expected {dim}",
                m.columns.nrows()
            )));
        }
        q += &m.columns * m.columns.transpose();
    }
    Ok((&q + q.transpose()) * 0.5)
}

/// Theorem-grade burn-in together with the quantities it is built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurnInRequirement {
    pub length: usize,
    /// `K = (1 + sum_{t <= T-2} |h*(t)|)^2`.
    pub k_factor: f64,
    /// Tail target for `H*_unr`: `delta / (4 K T sqrt(c ell r))`.
    pub eps_unrolled: f64,
    /// Tail target for `H*_unr G*`: `delta / (4 K sqrt(c ell r T))`.
    pub eps_product: f64,
}

pub fn required_burn_in(
    h_star: &Filter,
    g_star: &Filter,
    cfg: &DesignConfig,
    delta: f64,
) -> Result<BurnInRequirement> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ArfiltError::InvalidInput(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    signal::check_stable_feedback(h_star)?;
    let t = cfg.t_len() as f64;
    let s: f64 = h_star
        .coeffs()
        .iter()
        .take(cfg.t_len().saturating_sub(1))
        .map(|v| v.abs())
        .sum();
    let k_factor = (1.0 + s).powi(2);
    let c_ell_r = (cfg.c_int() * cfg.ell * cfg.r) as f64;
    let eps_unrolled = delta / (4.0 * k_factor * t * c_ell_r.sqrt());
    let eps_product = delta / (4.0 * k_factor * (c_ell_r * t).sqrt());
    let l1 = signal::unrolled_sufficient_length(h_star, None, eps_unrolled)?;
    let l2 = signal::unrolled_sufficient_length(h_star, Some(g_star), eps_product)?;
    Ok(BurnInRequirement {
        length: l1.max(l2),
        k_factor,
        eps_unrolled,
        eps_product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn filt(c: &[f64]) -> Filter {
        Filter::new(c.to_vec()).unwrap()
    }

    fn cfg(r: usize, ell: usize, sigma: f64) -> DesignConfig {
        DesignConfig::new(r, 26.0, ell, sigma, 9)
    }

    #[test]
    fn design_counts() {
        let c = cfg(2, 1, 1.0);
        assert_eq!(c.c_int(), 26);
        assert_eq!(c.t_len(), 52);
        let inputs = design_inputs(&c, 4);
        let count = |f: fn(&RolloutLabel) -> bool| inputs.iter().filter(|(l, _)| f(l)).count();
        assert_eq!(count(|l| matches!(l, RolloutLabel::Zero { .. })), 52);
        assert_eq!(count(|l| matches!(l, RolloutLabel::Cos { .. })), 27);
        assert_eq!(count(|l| matches!(l, RolloutLabel::Sin { .. })), 27);
        assert!(inputs.iter().all(|(_, x)| x.len() == 4 + 52));
        // canonical order is the sorted order
        let labels: Vec<_> = inputs.iter().map(|(l, _)| *l).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(labels, sorted);
    }

    #[test]
    fn c_rounds_up_to_even() {
        assert_eq!(DesignConfig::new(3, 8.0 * PI, 1, 1.0, 0).c_int(), 26);
        assert_eq!(DesignConfig::new(3, 26.5, 1, 1.0, 0).c_int(), 28);
        assert_eq!(DesignConfig::new(3, 27.0, 1, 1.0, 0).c_int(), 28);
        assert!(DesignConfig::new(3, 20.0, 1, 1.0, 0).validate().is_err());
    }

    #[test]
    fn design_signals() {
        let c = cfg(2, 1, 1.0);
        let inputs = design_inputs(&c, 4);
        let find = |label| &inputs.iter().find(|(l, _)| *l == label).unwrap().1;
        assert!(find(RolloutLabel::Cos { j: 0, k: 1 })
            .iter()
            .all(|&v| v == 1.0));
        assert!(find(RolloutLabel::Sin { j: 0, k: 1 })
            .iter()
            .all(|&v| v == 0.0));
        let x13 = find(RolloutLabel::Cos { j: 13, k: 1 });
        for (i, &v) in x13.iter().enumerate() {
            let t = i as i64 - 4;
            assert_abs_diff_eq!(v, (PI * t as f64 / 2.0).cos(), epsilon = 1e-12);
            if i >= 4 {
                assert_eq!(v, x13[i - 4]);
            }
        }
    }

    #[test]
    fn simulate_examples() {
        let mut x = vec![0.0; 8];
        let l = 3;
        x[l] = 1.0; // delta at t = 0
        let y = simulate_ar(&filt(&[1.0]), &filt(&[0.0]), 0.0, &x, 1).unwrap();
        // y[i] = y(-L + 1 + i); impulse at t = 1 means i = L.
        for (i, &v) in y.iter().enumerate() {
            assert_eq!(v, if i == l { 1.0 } else { 0.0 });
        }
        let y = simulate_ar(&filt(&[0.0]), &filt(&[0.5]), 0.0, &[0.0; 8], 1).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let y = simulate_ar(&filt(&[1.0]), &filt(&[0.5]), 0.0, &x, 1).unwrap();
        for t in 1..=5i64 {
            assert_abs_diff_eq!(y[(l as i64 + t - 1) as usize], 0.5f64.powi(t as i32 - 1));
        }
    }

    #[test]
    fn simulate_errors() {
        assert!(matches!(
            simulate_ar(&filt(&[1.0]), &filt(&[2.0]), 1.0, &vec![1.0; 200], 1),
            Err(ArfiltError::Overflow { .. })
        ));
        assert!(simulate_ar(&filt(&[1.0]), &filt(&[0.0]), 1.0, &[f64::NAN], 1).is_err());
        assert!(Filter::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn rollout_set_counts_and_determinism() {
        let c = cfg(2, 1, 0.0);
        let g = filt(&[1.0, 0.3]);
        let h = filt(&[0.4, -0.1]);
        let set = generate_rollouts(&c, &g, &h).unwrap();
        assert_eq!(set.rollouts.len(), 106);
        for r in set.zero_rollouts() {
            assert!(r.y.iter().all(|&v| v == 0.0));
        }
        let noisy = cfg(2, 1, 1.0);
        let a = generate_rollouts(&noisy, &g, &h).unwrap();
        let b = generate_rollouts(&noisy, &g, &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_are_distinct_over_design() {
        let c = cfg(4, 3, 1.0);
        let seeds: HashSet<u64> = design_inputs(&c, 4)
            .iter()
            .map(|(l, _)| rollout_seed(c.seed, l))
            .collect();
        assert_eq!(seeds.len(), design_inputs(&c, 4).len());
    }

    #[test]
    fn regressor_examples() {
        // r = 1, T = 2 with explicit values.
        let ro = Rollout {
            label: RolloutLabel::Zero { k: 1 },
            x: vec![0.0; 3],
            y: vec![7.0, 8.0, 9.0], // y(0), y(1), y(2) with L = 1
            noise_seed: 0,
            burn_in: 1,
        };
        let m = build_regressor(&ro, 1, false).unwrap();
        assert_eq!(m.columns.shape(), (1, 2));
        assert_eq!(m.column(1)[0], 7.0);
        assert_eq!(m.column(2)[0], 8.0);
        assert_eq!(m.targets.as_slice(), &[8.0, 9.0]);
        assert!(matches!(
            build_regressor(&ro, 2, false),
            Err(ArfiltError::InsufficientHistory { .. })
        ));

        let c = cfg(3, 1, 0.0).with_burn_in(BurnIn::Fixed(5));
        let set = generate_rollouts(&c, &filt(&[1.0]), &filt(&[0.0])).unwrap();
        let cos = set
            .rollouts
            .iter()
            .find(|r| r.label == RolloutLabel::Cos { j: 5, k: 1 })
            .unwrap();
        let m = build_regressor(cos, 3, true).unwrap();
        let w = c.frequency(5);
        for t in 1..=m.t_len() {
            let col = m.column(t);
            for i in 0..3 {
                let s = t as f64 - 1.0 - i as f64;
                assert_abs_diff_eq!(col[i], (w * s).cos(), epsilon = 1e-12);
                // y(t) = x(t - 1) for g* = [1], h* = 0
                assert_abs_diff_eq!(col[3 + i], cos.x_at(t as i64 - 2 - i as i64), epsilon = 0.0);
            }
        }
    }

    #[test]
    fn zero_noise_regression_reproduces_targets() {
        let c = cfg(3, 1, 0.0);
        let g = filt(&[0.8, -0.2, 0.1]);
        let h = filt(&[0.5, 0.2, -0.1]);
        let set = generate_rollouts(&c, &g, &h).unwrap();
        let theta = DVector::from_iterator(6, g.coeffs().iter().chain(h.coeffs()).copied());
        for ro in &set.rollouts {
            let include_x = !matches!(ro.label, RolloutLabel::Zero { .. });
            let m = build_regressor(ro, 3, include_x).unwrap();
            let pred = if include_x {
                m.columns.transpose() * &theta
            } else {
                m.columns.transpose() * theta.rows(3, 3)
            };
            assert!((pred - &m.targets).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn gram_examples() {
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let m = RegressorMatrix {
            columns: v.clone(),
            targets: DVector::zeros(1),
            include_x: false,
        };
        let g = gram(std::slice::from_ref(&m), 2).unwrap();
        assert_eq!(g, &v * v.transpose());
        assert_eq!(gram(&[], 3).unwrap(), DMatrix::zeros(3, 3));
        let g2 = gram(&[m.clone(), m.clone()], 2).unwrap();
        assert_eq!(g2, g * 2.0);
        assert!(gram(&[m], 3).is_err());
    }

    #[test]
    fn frequency_input_gram_has_rank_two() {
        let c = cfg(4, 1, 1.0);
        let set = generate_rollouts(&c, &filt(&[1.0]), &filt(&[0.3])).unwrap();
        for j in [0, 1, 7, c.max_frequency()] {
            let mats: Vec<_> = set
                .frequency_rollouts(j)
                .map(|r| build_regressor(r, 4, true).unwrap())
                .collect();
            let q = gram(&mats, 8).unwrap();
            let qx = q.view((0, 0), (4, 4)).into_owned();
            let sv = crate::linalg::singular_values(&qx);
            let rank = sv.iter().filter(|&&s| s > 1e-9 * sv[0]).count();
            assert!(rank <= 2, "j = {j}: rank {rank}");
            if j == 0 || j == c.max_frequency() {
                assert_eq!(rank, 1);
            }
        }
    }

    #[test]
    fn burn_in_examples() {
        let c = cfg(2, 1, 1.0);
        let req = required_burn_in(&filt(&[0.0]), &filt(&[1.0, 0.5]), &c, 0.1).unwrap();
        assert_eq!(req.k_factor, 1.0);
        assert_eq!(req.length, 2);

        let h = filt(&[0.5]);
        let req = required_burn_in(&h, &filt(&[1.0]), &c, 0.1).unwrap();
        let t = 52.0;
        let eps = 0.1 / (4.0 * req.k_factor * t * (26.0f64 * 2.0).sqrt());
        assert_abs_diff_eq!(req.eps_unrolled, eps, epsilon = 1e-18);
        let u = signal::unroll(&h, 4000);
        assert!(signal::tail_l1(&u, req.length) <= eps);

        let req = required_burn_in(&filt(&[0.3, 0.1]), &filt(&[1.0]), &c, 0.1).unwrap();
        assert_abs_diff_eq!(req.k_factor, 1.96, epsilon = 1e-12);
        assert!(required_burn_in(&filt(&[1.5]), &filt(&[1.0]), &c, 0.1).is_err());
    }

    #[test]
    fn auto_burn_in_covers_transient() {
        let c = cfg(2, 1, 1.0);
        let h = filt(&[0.5]);
        let l = c.resolve_burn_in(&filt(&[1.0]), &h).unwrap();
        assert!(l >= 2);
        assert!(signal::tail_l1(&signal::unroll(&h, 2000), l) <= AUTO_BURN_IN_EPS);
        let fixed = c.clone().with_burn_in(BurnIn::Fixed(1));
        assert!(fixed.validate().is_err());
    }
}
