//! Error measurement for learned filters: realized prediction errors,
//! H-infinity/H2 norms of the error transfer functions, frequency-domain
//! errors, Monte-Carlo estimates of the `(eps1, eps2)` decomposition
//!
//! `E sum_t y_err(t)^2 <= eps1^2 sum_t x(t)^2 + eps2^2 T`,
//!
//! theoretical rate curves, and the scaling-law experiment.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArfiltError, Result};
use crate::estimator::{estimate, ordinary_ls_baseline};
use crate::rollout::{derive_seed, generate_rollouts, simulate_ar, DesignConfig};
use crate::signal::{self, Filter};

/// Tail tolerance for the truncated error series.
pub const TRUNCATION_EPS: f64 = 1e-8;
/// Hard cap on truncated series length.
pub const TRUNCATION_CAP: usize = 100_000;
pub const DEFAULT_N_MC: usize = 256;
pub const DEFAULT_TEST_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

/// True autoregressive system `y(t+1) = g* * x(t) + h* * y(t) + sigma eta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArSystem {
    pub g_star: Filter,
    pub h_star: Filter,
    pub sigma: f64,
}

impl ArSystem {
    pub fn new(g_star: Filter, h_star: Filter, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(ArfiltError::InvalidInput(format!(
                "invalid noise level {sigma}"
            )));
        }
        signal::check_stable_feedback(&h_star)?;
        Ok(ArSystem {
            g_star,
            h_star,
            sigma,
        })
    }

    /// Outputs `y(0), ..., y(T-1)` for inputs `x(0), ..., x(T-1)` from rest,
    /// so that `y(0) = 0`.
    pub fn simulate_from_rest(&self, x: &[f64], seed: u64) -> Result<Vec<f64>> {
        let mut y = Vec::with_capacity(x.len());
        if x.is_empty() {
            return Ok(y);
        }
        y.push(0.0);
        let ahead = simulate_ar(
            &self.g_star,
            &self.h_star,
            self.sigma,
            &x[..x.len() - 1],
            seed,
        )?;
        y.extend(ahead);
        Ok(y)
    }
}

/// `y_err(t+1) = (g - g*) * x(t) + (h - h*) * y(t)` for `t = 0..T-1`,
/// where `x[t] = x(t)`, `y[t] = y(t)` and earlier history is zero.
pub fn prediction_error(
    g: &Filter,
    h: &Filter,
    g_star: &Filter,
    h_star: &Filter,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(ArfiltError::InvalidInput(format!(
            "input and output lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let a = signal::convolve(&g.sub(g_star), x)?;
    let b = signal::convolve(&h.sub(h_star), y)?;
    Ok(a.into_iter().zip(b).map(|(u, v)| u + v).collect())
}

/// Truncated error transfer functions of a learned pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModel {
    /// Coefficients of `(G - G*) + z^-1 (H - H*) H*_unr G*`.
    pub combined: Filter,
    /// Coefficients of `(H - H*) H*_unr`.
    pub noise: Filter,
    pub truncation_len: usize,
    /// l1 mass of the combined series beyond the truncation.
    pub truncation_tail: f64,
    pub capped: bool,
}

impl ErrorModel {
    pub fn new(g: &Filter, h: &Filter, g_star: &Filter, h_star: &Filter) -> Result<Self> {
        signal::check_stable_feedback(h_star)?;
        let need = signal::unrolled_sufficient_length(h_star, None, TRUNCATION_EPS)?.max(
            signal::unrolled_sufficient_length(h_star, Some(g_star), TRUNCATION_EPS)?,
        );
        let min_len = g.len() + h.len() + g_star.len();
        let mut len = need.max(min_len).max(1);
        let capped = len > TRUNCATION_CAP;
        if capped {
            log::warn!("error series truncated at the cap of {TRUNCATION_CAP} coefficients");
            len = TRUNCATION_CAP.max(min_len);
        }
        let comb = signal::combined_error_filter(g, h, g_star, h_star, len)?;
        let unr = signal::unroll(h_star, len);
        let noise = h.sub(h_star).product(&unr, len);
        Ok(ErrorModel {
            combined: comb.filter,
            noise,
            truncation_len: len,
            truncation_tail: comb.truncation_tail,
            capped,
        })
    }

    /// Grid size shared by all frequency-domain reports; a multiple of `t_len`
    /// so that the design frequencies lie on the grid.
    pub fn grid_size(&self, t_len: usize) -> usize {
        let base = signal::default_grid_size(self.truncation_len);
        let t = t_len.max(1);
        base.div_ceil(t) * t
    }

    pub fn response(&self, omega: f64) -> Result<Complex64> {
        signal::eval_transfer(&self.combined, omega)
    }

    pub fn hinf_err(&self, n_points: usize) -> Result<f64> {
        signal::hinf_norm(&self.combined, n_points)
    }

    pub fn h2_err(&self) -> f64 {
        signal::h2_norm(&self.noise)
    }

    /// `|combined error|` on the `n_points` grid `omega_m = 2 pi m / n_points`.
    pub fn dense_errors(&self, n_points: usize) -> Result<Vec<(f64, f64)>> {
        let grid = signal::frequency_grid(&self.combined, n_points)?;
        Ok(grid
            .values
            .iter()
            .enumerate()
            .map(|(m, v)| (grid.omega(m), v.norm()))
            .collect())
    }
}

/// H-infinity and H2 error norms with truncation diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub hinf_err: f64,
    pub h2_err: f64,
    pub truncation_len: usize,
    pub truncation_tail: f64,
    pub capped: bool,
}

pub fn hinf_h2_errors(
    g: &Filter,
    h: &Filter,
    g_star: &Filter,
    h_star: &Filter,
) -> Result<ErrorNorms> {
    let model = ErrorModel::new(g, h, g_star, h_star)?;
    let n = signal::default_grid_size(model.truncation_len);
    Ok(ErrorNorms {
        hinf_err: model.hinf_err(n)?,
        h2_err: model.h2_err(),
        truncation_len: model.truncation_len,
        truncation_tail: model.truncation_tail,
        capped: model.capped,
    })
}

/// `|combined error transfer|` at `e^{i omega}`.
pub fn freq_response_error(
    g: &Filter,
    h: &Filter,
    g_star: &Filter,
    h_star: &Filter,
    omega: f64,
) -> Result<f64> {
    Ok(ErrorModel::new(g, h, g_star, h_star)?
        .response(omega)?
        .norm())
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McStat {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McStat {
    pub fn from_samples(s: &[f64]) -> Self {
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        McStat {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }
}

fn mc_samples<F>(n_mc: usize, seed: u64, stream: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    (0..n_mc as u64)
        .into_par_iter()
        .map(|i| f(derive_seed(seed, stream, i)))
        .collect()
}

/// `E sum_{t=1..T} y_err(t)^2` for one test input of length `T`.
pub fn mc_error(
    g: &Filter,
    h: &Filter,
    system: &ArSystem,
    x: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<McStat> {
    if n_mc < 2 {
        return Err(ArfiltError::InvalidInput("n_mc must be at least 2".into()));
    }
    let samples = mc_samples(n_mc, seed, 0x6d63_6572, |s| {
        let y = system.simulate_from_rest(x, s)?;
        let e = prediction_error(g, h, &system.g_star, &system.h_star, x, &y)?;
        Ok(e.iter().map(|v| v * v).sum())
    })?;
    Ok(McStat::from_samples(&samples))
}

/// Per-step zero-input error variance, averaged over `t = warmup+1 .. t_len`.
pub fn zero_input_step_variance(
    g: &Filter,
    h: &Filter,
    system: &ArSystem,
    t_len: usize,
    warmup: usize,
    n_mc: usize,
    seed: u64,
) -> Result<McStat> {
    if n_mc < 2 {
        return Err(ArfiltError::InvalidInput("n_mc must be at least 2".into()));
    }
    if warmup >= t_len {
        return Err(ArfiltError::InvalidInput(
            "warm-up must be shorter than the horizon".into(),
        ));
    }
    let x = vec![0.0; t_len];
    let samples = mc_samples(n_mc, seed, 0x7a65_726f, |s| {
        let y = system.simulate_from_rest(&x, s)?;
        let e = prediction_error(g, h, &system.g_star, &system.h_star, &x, &y)?;
        let tail = &e[warmup..];
        Ok(tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64)
    })?;
    Ok(McStat::from_samples(&samples))
}

/// Unit-norm smooth random signal: white noise passed through a short moving average.
pub fn smooth_signal(t_len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 8;
    let raw: Vec<f64> = (0..t_len + width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let x: Vec<f64> = (0..t_len)
        .map(|t| raw[t..t + width].iter().sum::<f64>() / width as f64)
        .collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        x
    } else {
        x.into_iter().map(|v| v / norm).collect()
    }
}

/// The zero input followed by `scales` multiples of one smooth unit-norm signal.
pub fn default_test_designs(t_len: usize, scales: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let base = smooth_signal(t_len, seed);
    std::iter::once(vec![0.0; t_len])
        .chain(scales.iter().map(|s| base.iter().map(|v| v * s).collect()))
        .collect()
}

/// One Monte-Carlo design point of [`empirical_eps`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignError {
    pub input_norm_sq: f64,
    pub error: McStat,
}

/// Fitted `(eps1, eps2)` with standard errors of their squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEps {
    pub eps1_hat: f64,
    pub eps2_hat: f64,
    pub eps1_sq_se: f64,
    pub eps2_sq_se: f64,
    pub designs: Vec<DesignError>,
}

pub fn empirical_eps(
    g: &Filter,
    h: &Filter,
    system: &ArSystem,
    test_designs: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
) -> Result<EmpiricalEps> {
    if n_mc < 2 {
        return Err(ArfiltError::InvalidInput("n_mc must be at least 2".into()));
    }
    let t_len = test_designs.first().map_or(0, Vec::len);
    if t_len == 0 || test_designs.iter().any(|x| x.len() != t_len) {
        return Err(ArfiltError::InvalidInput(
            "test inputs must share a positive length".into(),
        ));
    }
    let norms: Vec<f64> = test_designs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum())
        .collect();
    let n_zero = norms.iter().filter(|&&n| n == 0.0).count();
    if n_zero == 0 || norms.len() - n_zero < 3 {
        return Err(ArfiltError::InvalidInput(
            "test inputs need the zero input and at least three nonzero inputs".into(),
        ));
    }
    let mut designs = Vec::with_capacity(test_designs.len());
    for (i, x) in test_designs.iter().enumerate() {
        let stat = mc_error(
            g,
            h,
            system,
            x,
            n_mc,
            derive_seed(seed, 0x6570_7331, i as u64),
        )?;
        designs.push(DesignError {
            input_norm_sq: norms[i],
            error: stat,
        });
    }
    let zero: Vec<&DesignError> = designs.iter().filter(|d| d.input_norm_sq == 0.0).collect();
    let t = t_len as f64;
    let zero_mean = zero.iter().map(|d| d.error.mean).sum::<f64>() / zero.len() as f64;
    let zero_var =
        zero.iter().map(|d| d.error.se.powi(2)).sum::<f64>() / (zero.len() as f64).powi(2);
    let eps2_sq = zero_mean / t;
    let nonzero: Vec<&DesignError> = designs.iter().filter(|d| d.input_norm_sq > 0.0).collect();
    let sxx: f64 = nonzero.iter().map(|d| d.input_norm_sq.powi(2)).sum();
    let sxy: f64 = nonzero
        .iter()
        .map(|d| d.input_norm_sq * (d.error.mean - zero_mean))
        .sum();
    let eps1_sq = sxy / sxx;
    let sx: f64 = nonzero.iter().map(|d| d.input_norm_sq).sum();
    let var1 = nonzero
        .iter()
        .map(|d| d.input_norm_sq.powi(2) * d.error.se.powi(2))
        .sum::<f64>()
        / sxx.powi(2)
        + (sx / sxx).powi(2) * zero_var;
    Ok(EmpiricalEps {
        eps1_hat: eps1_sq.max(0.0).sqrt(),
        eps2_hat: eps2_sq.max(0.0).sqrt(),
        eps1_sq_se: var1.sqrt(),
        eps2_sq_se: zero_var.sqrt() / t,
        designs,
    })
}

/// Theoretical rates with the unspecified constant set to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub eps1_theory: f64,
    pub eps2_theory: f64,
}

/// `eps1 = ln(c ell r T / delta)^{3/2} (1 + ||H*||) ||H*_unr|| / sqrt(c ell T)` and
/// `eps2 = ln(c ell r T / delta)^2 / sqrt(c ell T)`.
pub fn rate_formulas(
    c: f64,
    ell: f64,
    r: f64,
    t: f64,
    delta: f64,
    hstar_inf: f64,
    hunr_inf: f64,
) -> RateCurve {
    let scale = 1.0 / (c * ell * t).sqrt();
    let log = (c * ell * r * t / delta).ln();
    RateCurve {
        eps1_theory: scale * log.powf(1.5) * (1.0 + hstar_inf) * hunr_inf,
        eps2_theory: scale * log * log,
    }
}

/// [`rate_formulas`] for a design and its feedback filter.
pub fn theoretical_rates(cfg: &DesignConfig, delta: f64, h_star: &Filter) -> Result<RateCurve> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ArfiltError::InvalidInput(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let hstar_inf = signal::check_stable_feedback(h_star)?;
    let n = signal::default_grid_size(h_star.len() + 1);
    let hunr_inf = signal::unrolled_scaled_hinf_norm(h_star, None, 1.0, n);
    Ok(rate_formulas(
        cfg.c_int() as f64,
        cfg.ell as f64,
        cfg.r as f64,
        cfg.t_len() as f64,
        delta,
        hstar_inf,
        hunr_inf,
    ))
}

/// Learned-vs-true errors of one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunErrors {
    pub seed: u64,
    pub minmax: ErrorNorms,
    pub ols: ErrorNorms,
    pub minmax_objective: f64,
}

/// One `ell` rung of a scaling experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub ell: usize,
    pub median_hinf: f64,
    pub median_hinf_ols: f64,
    pub runs: Vec<RunErrors>,
    pub theory: RateCurve,
}

/// Log-log fit of median error against `ell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub half_width: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// `None` when all errors sit at the numerical floor.
    pub slope: Option<SlopeFit>,
    pub slope_ols: Option<SlopeFit>,
    pub floor: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

const BOOTSTRAP_DRAWS: usize = 400;
/// Relative size below which errors count as the numerical floor.
const FLOOR_LEVEL: f64 = 1e-9;

fn bootstrap_slope(ells: &[f64], per_ell: &[Vec<f64>], seed: u64) -> SlopeFit {
    let medians: Vec<f64> = per_ell.iter().map(|v| median(v)).collect();
    let (slope, intercept) = loglog_fit(ells, &medians);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes: Vec<f64> = (0..BOOTSTRAP_DRAWS)
        .map(|_| {
            let m: Vec<f64> = per_ell
                .iter()
                .map(|v| {
                    let s: Vec<f64> = (0..v.len())
                        .map(|_| v[rng.random_range(0..v.len())])
                        .collect();
                    median(&s)
                })
                .collect();
            loglog_fit(ells, &m).0
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((slopes.len() - 1) as f64 * p).round() as usize];
    SlopeFit {
        slope,
        half_width: 0.5 * (q(0.975) - q(0.025)),
        intercept,
    }
}

/// Runs the full pipeline for every `(ell, seed)` and summarizes the median
/// H-infinity error per `ell`. Each completed row is passed to `sink` before
/// the next rung starts, so partial results survive a later failure.
pub fn scaling_experiment<F>(
    system: &ArSystem,
    base: &DesignConfig,
    ell_values: &[usize],
    n_seeds: usize,
    delta: f64,
    mut sink: F,
) -> Result<ScalingTable>
where
    F: FnMut(&ScalingRow) -> Result<()>,
{
    if ell_values.is_empty() || n_seeds == 0 {
        return Err(ArfiltError::InvalidInput(
            "need at least one ell value and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(ell_values.len());
    for &ell in ell_values {
        let runs = (0..n_seeds as u64)
            .into_par_iter()
            .map(|s| {
                let seed = derive_seed(base.seed, ell as u64, s);
                let cfg = DesignConfig {
                    ell,
                    seed,
                    sigma: system.sigma,
                    ..base.clone()
                };
                let set = generate_rollouts(&cfg, &system.g_star, &system.h_star)?;
                let res = estimate(&set)?;
                let (go, ho) = ordinary_ls_baseline(&set.rollouts, cfg.r)?;
                Ok(RunErrors {
                    seed,
                    minmax: hinf_h2_errors(&res.g, &res.h, &system.g_star, &system.h_star)?,
                    ols: hinf_h2_errors(&go, &ho, &system.g_star, &system.h_star)?,
                    minmax_objective: res.minmax_objective,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = DesignConfig {
            ell,
            ..base.clone()
        };
        let row = ScalingRow {
            ell,
            median_hinf: median(&runs.iter().map(|r| r.minmax.hinf_err).collect::<Vec<_>>()),
            median_hinf_ols: median(&runs.iter().map(|r| r.ols.hinf_err).collect::<Vec<_>>()),
            theory: theoretical_rates(&cfg, delta, &system.h_star)?,
            runs,
        };
        sink(&row)?;
        rows.push(row);
    }
    let scale = 1.0 + system.g_star.l1_norm();
    let floor = system.sigma == 0.0 || rows.iter().all(|r| r.median_hinf <= FLOOR_LEVEL * scale);
    let (slope, slope_ols) = if floor || rows.len() < 2 {
        (None, None)
    } else {
        let ells: Vec<f64> = rows.iter().map(|r| r.ell as f64).collect();
        let mm: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.runs.iter().map(|x| x.minmax.hinf_err).collect())
            .collect();
        let oo: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.runs.iter().map(|x| x.ols.hinf_err).collect())
            .collect();
        (
            Some(bootstrap_slope(
                &ells,
                &mm,
                derive_seed(base.seed, 0x626f_6f74, 0),
            )),
            Some(bootstrap_slope(
                &ells,
                &oo,
                derive_seed(base.seed, 0x626f_6f74, 1),
            )),
        )
    };
    Ok(ScalingTable {
        rows,
        slope,
        slope_ols,
        floor,
    })
}
