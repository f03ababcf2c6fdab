//! Causal filters and their transfer functions on the unit circle.
//!
//! A [`Filter`] is a finite impulse response `f(0), f(1), ..., f(len-1)` with
//! transfer function `F(z) = sum_k f(k) z^-k`. Besides convolution and
//! frequency-response evaluation this module provides the norms used for
//! error reporting (H2 and a grid approximation of H-infinity), the power
//! series `1 / (1 - z^-1 H(z))` of an autoregressive feedback filter, and
//! the truncation-length machinery built on stability radii.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ArfiltError, Result};

/// Magnitude above which an unrolled series is reported as likely divergent.
pub const UNROLL_WARN_THRESHOLD: f64 = 1e12;

/// Finite real impulse response, `f(k) = coeffs[k]` and zero elsewhere.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Filter {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Filter {
    type Error = ArfiltError;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Filter::new(coeffs)
    }
}

impl From<Filter> for Vec<f64> {
    fn from(f: Filter) -> Self {
        f.coeffs
    }
}

impl Filter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        ensure_finite(&coeffs, "filter")?;
        Ok(Filter { coeffs })
    }

    /// Wraps coefficients produced by finite arithmetic on validated data.
    pub(crate) fn from_trusted(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        Filter { coeffs }
    }

    pub fn zeros(len: usize) -> Self {
        Filter {
            coeffs: vec![0.0; len],
        }
    }

    /// Unit impulse of the given length placed at index `at`.
    pub fn impulse(len: usize, at: usize) -> Self {
        let mut f = Filter::zeros(len.max(at + 1));
        f.coeffs[at] = 1.0;
        f
    }

    /// `a^k` for `k = 0..len`.
    pub fn geometric(a: f64, len: usize) -> Self {
        Filter {
            coeffs: (0..len).map(|k| a.powi(k as i32)).collect(),
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient at `k`, zero outside the stored support.
    pub fn get(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Index of the last nonzero coefficient, `None` for the zero filter.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.degree().is_none()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Coefficient-wise `self - other`, padding the shorter operand with zeros.
    pub fn sub(&self, other: &Filter) -> Filter {
        let n = self.len().max(other.len());
        Filter {
            coeffs: (0..n).map(|k| self.get(k) - other.get(k)).collect(),
        }
    }

    pub fn add(&self, other: &Filter) -> Filter {
        let n = self.len().max(other.len());
        Filter {
            coeffs: (0..n).map(|k| self.get(k) + other.get(k)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Filter {
        Filter {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// Multiplication by `z^-1`.
    pub fn delayed(&self) -> Filter {
        let mut coeffs = Vec::with_capacity(self.len() + 1);
        coeffs.push(0.0);
        coeffs.extend_from_slice(&self.coeffs);
        Filter { coeffs }
    }

    /// First `len` coefficients, zero-padded when the filter is shorter.
    pub fn truncated(&self, len: usize) -> Filter {
        Filter {
            coeffs: (0..len).map(|k| self.get(k)).collect(),
        }
    }

    /// Series product `self * other`, keeping the first `len` coefficients.
    pub fn product(&self, other: &Filter, len: usize) -> Filter {
        let mut out = vec![0.0; len];
        for (i, &a) in self.coeffs.iter().enumerate().take(len) {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().take(len - i).enumerate() {
                out[i + j] += a * b;
            }
        }
        Filter { coeffs: out }
    }

    /// Full-length series product.
    pub fn full_product(&self, other: &Filter) -> Filter {
        if self.is_empty() || other.is_empty() {
            return Filter::default();
        }
        self.product(other, self.len() + other.len() - 1)
    }
}

/// Causal convolution, `out(t) = sum_{k <= t} f(k) x(t - k)` for `t < len(x)`.
pub fn convolve(f: &Filter, x: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(x, "signal")?;
    Ok(convolve_unchecked(f.coeffs(), x))
}

pub(crate) fn convolve_unchecked(f: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            f.iter()
                .take(t + 1)
                .enumerate()
                .map(|(k, &fk)| fk * x[t - k])
                .sum()
        })
        .collect()
}

/// `F(e^{i omega}) = sum_k f(k) e^{-i omega k}`, by Horner's rule in `e^{-i omega}`.
pub fn eval_transfer(f: &Filter, omega: f64) -> Result<Complex64> {
    if !omega.is_finite() {
        return Err(ArfiltError::InvalidInput("frequency must be finite".into()));
    }
    let w = Complex64::from_polar(1.0, -omega);
    Ok(f.coeffs()
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c))
}

/// Transfer function sampled at `omega_m = 2 pi m / n_points`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    pub n_points: usize,
    pub values: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct FrequencyGridRepr {
    n_points: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for FrequencyGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FrequencyGridRepr {
            n_points: self.n_points,
            re: self.values.iter().map(|v| v.re).collect(),
            im: self.values.iter().map(|v| v.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FrequencyGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = FrequencyGridRepr::deserialize(d)?;
        if repr.n_points == 0 || repr.re.len() != repr.n_points || repr.im.len() != repr.n_points {
            return Err(serde::de::Error::custom(
                "frequency grid needs n_points >= 1 and re/im of length n_points",
            ));
        }
        Ok(FrequencyGrid {
            n_points: repr.n_points,
            values: repr
                .re
                .into_iter()
                .zip(repr.im)
                .map(|(re, im)| Complex64::new(re, im))
                .collect(),
        })
    }
}

impl FrequencyGrid {
    pub fn omega(&self, m: usize) -> f64 {
        2.0 * std::f64::consts::PI * m as f64 / self.n_points as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Evaluates the polynomial with coefficients `coeffs` (in `e^{-i omega}`) on the
/// `n`-point grid with one FFT. Coefficients beyond `n` alias onto `k mod n`,
/// which is exact because `e^{-2 pi i m k / n}` is `n`-periodic in `k`.
pub(crate) fn grid_values(coeffs: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, &c) in coeffs.iter().enumerate() {
        buf[k % n].re += c;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

pub fn frequency_grid(f: &Filter, n_points: usize) -> Result<FrequencyGrid> {
    if n_points == 0 {
        return Err(ArfiltError::InvalidInput(
            "frequency grid needs at least one point".into(),
        ));
    }
    Ok(FrequencyGrid {
        n_points,
        values: grid_values(f.coeffs(), n_points),
    })
}

/// Circle L2 norm; equals the coefficient 2-norm by Parseval.
pub fn h2_norm(f: &Filter) -> f64 {
    f.coeffs().iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Default number of grid points for H-infinity estimation of a length-`len` filter.
pub fn default_grid_size(len: usize) -> usize {
    4096.max(64 * len)
}

/// Grid maximum of `|F|` over `n_points` equispaced points of the unit circle.
///
/// This approximates the H-infinity norm from below; the gap shrinks like
/// `(deg / n_points)^2` for a smooth maximum.
pub fn hinf_norm(f: &Filter, n_points: usize) -> Result<f64> {
    Ok(frequency_grid(f, n_points)?.max_abs())
}

/// [`hinf_norm`] on the [`default_grid_size`] grid.
pub fn hinf_norm_default(f: &Filter) -> f64 {
    frequency_grid(f, default_grid_size(f.len()))
        .map(|g| g.max_abs())
        .unwrap_or(0.0)
}

/// Peak magnitude reached while unrolling, reported alongside the series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollDiagnostics {
    pub peak_abs: f64,
    pub diverging: bool,
}

/// First `length` coefficients of `1 / (1 - z^-1 H(z))`.
///
/// Uses `u(0) = 1`, `u(t) = sum_k h(k) u(t-1-k)`. A warning is logged when the
/// series exceeds [`UNROLL_WARN_THRESHOLD`]; divergence is not an error.
pub fn unroll(h: &Filter, length: usize) -> Filter {
    let (u, diag) = unroll_with_diagnostics(h, length);
    if diag.diverging {
        log::warn!(
            "unrolled series reached |u| = {:e}; feedback filter is likely unstable",
            diag.peak_abs
        );
    }
    u
}

pub fn unroll_with_diagnostics(h: &Filter, length: usize) -> (Filter, UnrollDiagnostics) {
    let mut u = Vec::with_capacity(length);
    let mut peak = 0.0f64;
    for t in 0..length {
        let v = if t == 0 {
            1.0
        } else {
            h.coeffs()
                .iter()
                .take(t)
                .enumerate()
                .map(|(k, &hk)| hk * u[t - 1 - k])
                .sum()
        };
        peak = peak.max(f64::abs(v));
        u.push(v);
    }
    let diag = UnrollDiagnostics {
        peak_abs: peak,
        diverging: !(peak <= UNROLL_WARN_THRESHOLD),
    };
    (Filter { coeffs: u }, diag)
}

/// `sum_{k >= start} |f(k)|` over the stored coefficients.
pub fn tail_l1(f: &Filter, start: usize) -> f64 {
    f.coeffs().iter().skip(start).map(|c| c.abs()).sum()
}

/// Stability radius `rho` and the grid of `gamma in (rho, 1)` searched by
/// [`sufficient_length`].
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityEstimate {
    rho: f64,
    gamma_grid: Vec<f64>,
}

impl StabilityEstimate {
    pub fn new(rho: f64, gamma_grid: Vec<f64>) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(ArfiltError::InvalidInput(format!(
                "stability radius must lie in (0, 1), got {rho}"
            )));
        }
        if gamma_grid.is_empty() {
            return Err(ArfiltError::InvalidInput("empty gamma grid".into()));
        }
        let increasing = gamma_grid.windows(2).all(|w| w[0] < w[1]);
        if !increasing || gamma_grid[0] <= rho || gamma_grid[gamma_grid.len() - 1] >= 1.0 {
            return Err(ArfiltError::InvalidInput(
                "gamma grid must be increasing and inside (rho, 1)".into(),
            ));
        }
        Ok(StabilityEstimate { rho, gamma_grid })
    }

    /// `n` points with `1 - gamma` log-spaced between `1 - rho - 1e-6` and `1e-6`.
    pub fn log_spaced(rho: f64, n: usize) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(ArfiltError::InvalidInput(format!(
                "stability radius must lie in (0, 1), got {rho}"
            )));
        }
        let hi = (1.0 - rho - 1e-6).max(2e-6);
        let lo = 1e-6f64.min(hi / 2.0);
        let n = n.max(1);
        let step = if n > 1 {
            (lo.ln() - hi.ln()) / (n - 1) as f64
        } else {
            0.0
        };
        let mut grid: Vec<f64> = (0..n)
            .map(|i| 1.0 - (hi.ln() + step * i as f64).exp())
            .filter(|&g| g > rho && g < 1.0)
            .collect();
        grid.dedup();
        StabilityEstimate::new(rho, grid)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gamma_grid(&self) -> &[f64] {
        &self.gamma_grid
    }
}

/// Number of gamma points used by the default [`StabilityEstimate`].
pub const DEFAULT_GAMMA_POINTS: usize = 200;

/// Truncation length guaranteeing an l1 tail of at most `epsilon`:
/// `ceil(min_gamma ln(||F(gamma z)||_inf / (epsilon (1 - gamma))) / (1 - gamma))`,
/// floored at 1. `norm_fn(gamma)` must return `||F(gamma z)||_inf`.
pub fn sufficient_length(
    est: &StabilityEstimate,
    norm_fn: impl Fn(f64) -> f64,
    epsilon: f64,
) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(ArfiltError::InvalidInput("epsilon must be positive".into()));
    }
    let best = est
        .gamma_grid
        .iter()
        .map(|&g| (norm_fn(g) / (epsilon * (1.0 - g))).ln() / (1.0 - g))
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(ArfiltError::NoFeasibleGamma);
    }
    if best >= usize::MAX as f64 {
        return Err(ArfiltError::NoFeasibleGamma);
    }
    Ok((best.ceil() as i64).max(1) as usize)
}

/// `||F(gamma z)||_inf` for a finite filter, i.e. the grid norm of `f(k) gamma^-k`.
pub fn scaled_hinf_norm(f: &Filter, gamma: f64, n_points: usize) -> f64 {
    let scaled: Vec<f64> = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, &c)| c * gamma.powi(-(k as i32)))
        .collect();
    if scaled.iter().any(|c| !c.is_finite()) {
        return f64::INFINITY;
    }
    grid_values(&scaled, n_points)
        .iter()
        .fold(0.0, |m, v| m.max(v.norm()))
}

/// `||N(gamma z) / D(gamma z)||_inf` on an `n_points` grid for polynomials `N`, `D`
/// in `z^-1` given by their coefficients.
pub fn rational_scaled_hinf_norm(num: &[f64], den: &[f64], gamma: f64, n_points: usize) -> f64 {
    let scale = |c: &[f64]| -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(k, &v)| v * gamma.powi(-(k as i32)))
            .collect()
    };
    let (num, den) = (scale(num), scale(den));
    if den.iter().chain(num.iter()).any(|c| !c.is_finite()) {
        return f64::INFINITY;
    }
    let dv = grid_values(&den, n_points);
    let nv = grid_values(&num, n_points);
    nv.iter()
        .zip(dv.iter())
        .fold(0.0, |m, (a, b)| m.max(a.norm() / b.norm()))
}

/// `||G(gamma z) / (1 - (gamma z)^-1 H(gamma z))||_inf` on an `n_points` grid,
/// with `G = 1` when `numerator` is `None`.
pub fn unrolled_scaled_hinf_norm(
    h: &Filter,
    numerator: Option<&Filter>,
    gamma: f64,
    n_points: usize,
) -> f64 {
    let mut den = vec![1.0];
    den.extend(h.coeffs().iter().map(|&c| -c));
    match numerator {
        Some(g) => rational_scaled_hinf_norm(g.coeffs(), &den, gamma, n_points),
        None => rational_scaled_hinf_norm(&[1.0], &den, gamma, n_points),
    }
}

/// Largest pole modulus of `1 / (1 - z^-1 H(z))`, from the companion matrix of
/// `z^n - h(0) z^(n-1) - ... - h(n-1)`.
pub fn unrolled_stability_radius(h: &Filter) -> f64 {
    let n = match h.degree() {
        Some(d) => d + 1,
        None => return 0.0,
    };
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        companion[(0, k)] = h.get(k);
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    crate::linalg::spectral_radius(&companion)
}

/// Smallest length whose exact l1 tail is at most `epsilon` (for finite filters).
pub fn exact_sufficient_length(f: &Filter, epsilon: f64) -> usize {
    let mut tail = f.l1_norm();
    let mut len = 0;
    while len < f.len() && tail > epsilon {
        tail -= f.get(len).abs();
        len += 1;
    }
    len.max(1)
}

/// Sufficient length for `G(z) / (1 - z^-1 H(z))` (with `G = 1` when `None`).
///
/// When `h` is the zero filter the series is the finite filter `G` itself, and
/// its exact tail is used instead of the stability-radius bound.
pub fn unrolled_sufficient_length(
    h: &Filter,
    numerator: Option<&Filter>,
    epsilon: f64,
) -> Result<usize> {
    if h.is_zero() {
        return Ok(match numerator {
            Some(g) => exact_sufficient_length(g, epsilon),
            None => 1,
        });
    }
    let rho = unrolled_stability_radius(h);
    if !(rho < 1.0) {
        return Err(ArfiltError::Instability(format!(
            "feedback filter has stability radius {rho} >= 1"
        )));
    }
    let est = StabilityEstimate::log_spaced(rho.max(1e-9), DEFAULT_GAMMA_POINTS)?;
    let len = h.len() + numerator.map_or(1, Filter::len);
    let n = 1024.max(16 * len);
    sufficient_length(
        &est,
        |g| unrolled_scaled_hinf_norm(h, numerator, g, n),
        epsilon,
    )
}

/// Ratio of the dense-grid maximum to the roots-of-unity maximum of a polynomial,
/// together with the interpolation bound that should dominate it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpBound {
    pub ratio: f64,
    pub bound: f64,
    pub degree: usize,
}

/// Compares `max |Q|` on a dense grid against the maximum over the `n` roots of
/// unity, where `Q(z) = sum_k q(k) z^k`. Trailing zeros do not count toward the
/// degree. The bound is `1 + 4 pi d / n` when `n >= 4 pi d`, and
/// `(2 / pi) ln(d + 2) + 1` otherwise.
pub fn interp_bound_ratio(q: &Filter, n: usize, n_dense: usize) -> Result<InterpBound> {
    if n == 0 || n_dense == 0 {
        return Err(ArfiltError::InvalidInput(
            "grid sizes must be positive".into(),
        ));
    }
    let degree = q.degree().ok_or(ArfiltError::DegeneratePolynomial)?;
    // |Q(e^{i w})| = |Q(e^{-i w})| for real coefficients, so the transfer-function
    // grid gives the same maxima.
    let coarse = hinf_norm(q, n)?;
    if coarse == 0.0 {
        return Err(ArfiltError::DegeneratePolynomial);
    }
    let dense = hinf_norm(q, n_dense)?;
    let d = degree as f64;
    let bound = if n as f64 >= 4.0 * std::f64::consts::PI * d {
        1.0 + 4.0 * std::f64::consts::PI * d / n as f64
    } else {
        2.0 / std::f64::consts::PI * (d + 2.0).ln() + 1.0
    };
    Ok(InterpBound {
        ratio: dense / coarse,
        bound,
        degree,
    })
}

/// Truncated coefficients of `(G - G*) + z^-1 (H - H*) U G*` with
/// `U = 1 / (1 - z^-1 H*)`, plus the l1 mass of the same series between
/// `trunc_len` and `2 trunc_len` as a truncation diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedError {
    pub filter: Filter,
    pub truncation_tail: f64,
}

pub fn combined_error_filter(
    g: &Filter,
    h: &Filter,
    g_star: &Filter,
    h_star: &Filter,
    trunc_len: usize,
) -> Result<CombinedError> {
    check_stable_feedback(h_star)?;
    let min_len = g.len() + h.len() + g_star.len();
    if trunc_len < min_len.max(1) {
        return Err(ArfiltError::InvalidInput(format!(
            "truncation length {trunc_len} shorter than required {min_len}"
        )));
    }
    let long = 2 * trunc_len;
    let u = unroll(h_star, long);
    let dh = h.sub(h_star);
    let feedback = dh.product(&u, long).product(g_star, long).delayed();
    let full = g.sub(g_star).add(&feedback).truncated(long);
    Ok(CombinedError {
        truncation_tail: tail_l1(&full, trunc_len),
        filter: full.truncated(trunc_len),
    })
}

/// Fails unless the grid H-infinity norm of `h_star` is below one.
pub fn check_stable_feedback(h_star: &Filter) -> Result<f64> {
    let norm = hinf_norm_default(h_star);
    if norm >= 1.0 {
        return Err(ArfiltError::Instability(format!(
            "||H*||_inf = {norm} is not below 1"
        )));
    }
    Ok(norm)
}
