//! Hidden-state linear dynamical systems and their steady-state Kalman filter.
//!
//! The system is
//!
//! ```text
//! h(t) = A h(t-1) + B x(t-1) + xi(t),    xi  ~ N(0, Sigma_xi)
//! y(t) = C h(t) + eta(t),                eta ~ N(0, Sigma_eta)
//! ```
//!
//! with scalar input and output. The steady-state one-step predictor is kept in
//! the form
//!
//! ```text
//! s(t)      = A_kf s(t-1) + B_kf_x x(t) + B_kf_y y(t)
//! yhat(t+1) = C_kf s(t)
//! ```
//!
//! where `s(t) = E[h(t+1) | y(1..t), x(..t)]`. With the prior covariance `P`
//! solving `P = A (P - P Cᵀ S⁻¹ C P) Aᵀ + Sigma_xi`, `S = C P Cᵀ + Sigma_eta`,
//! and the gain `K = P Cᵀ S⁻¹`, the matrices are
//!
//! ```text
//! A_kf = A (I - K C),   B_kf_x = B,   B_kf_y = A K,   C_kf = C
//! ```
//!
//! Unrolling the recursion gives the autoregressive filters
//! `g*(k) = C_kf A_kf^k B_kf_x` and `h*(k) = C_kf A_kf^k B_kf_y`, driven by
//! innovations of variance `S`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ArfiltError, Result};
use crate::linalg::{psd_sqrt, spectral_radius};
use crate::signal::{self, Filter, StabilityEstimate};

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 1_000_000;

mod rows {
    //! Row-major `[[..], [..]]` encoding for dense matrices.
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

/// Hidden-state LDS with scalar input and observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsSpec {
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_xi: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_eta: DMatrix<f64>,
}

impl LdsSpec {
    /// Scalar system `h(t) = a h(t-1) + b x(t-1) + xi`, `y = c h + eta`.
    pub fn scalar(a: f64, b: f64, c: f64, var_xi: f64, var_eta: f64) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        LdsSpec {
            a: m(a),
            b: m(b),
            c: m(c),
            sigma_xi: m(var_xi),
            sigma_eta: m(var_eta),
        }
    }

    /// Random-walk-like example with unit noises: `h(t) = rho h(t-1) + x(t-1) + xi`,
    /// `y = h + eta`.
    pub fn appendix_a(rho: f64) -> Self {
        LdsSpec::scalar(rho, 1.0, 1.0, 1.0, 1.0)
    }

    /// Random system with state dimension `d` whose `A` has spectral radius
    /// `radius`. Process noise is `G Gᵀ / d + 0.1 I`, observation noise in `[0.2, 1.2)`.
    pub fn random<R: rand::Rng>(rng: &mut R, d: usize, radius: f64) -> Self {
        let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };
        let mut a = DMatrix::from_fn(d, d, |_, _| normal());
        let rho = spectral_radius(&a);
        if rho > 0.0 {
            a *= radius / rho;
        }
        let b = DMatrix::from_fn(d, 1, |_, _| normal());
        let c = DMatrix::from_fn(1, d, |_, _| normal());
        let g = DMatrix::from_fn(d, d, |_, _| normal());
        let sigma_xi = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
        let u: f64 = rng.random();
        LdsSpec {
            a,
            b,
            c,
            sigma_xi,
            sigma_eta: DMatrix::from_element(1, 1, 0.2 + u),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.nrows();
        let shape_ok = self.a.ncols() == d
            && self.b.shape() == (d, 1)
            && self.c.shape() == (1, d)
            && self.sigma_xi.shape() == (d, d)
            && self.sigma_eta.shape() == (1, 1);
        if d == 0 || !shape_ok {
            return Err(ArfiltError::InvalidInput(format!(
                "inconsistent LDS dimensions: A {:?}, B {:?}, C {:?}, Sigma_xi {:?}, Sigma_eta {:?}",
                self.a.shape(),
                self.b.shape(),
                self.c.shape(),
                self.sigma_xi.shape(),
                self.sigma_eta.shape()
            )));
        }
        for (name, m) in [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("Sigma_xi", &self.sigma_xi),
            ("Sigma_eta", &self.sigma_eta),
        ] {
            ensure_finite(m.as_slice(), name)?;
        }
        for (name, m) in [("Sigma_xi", &self.sigma_xi), ("Sigma_eta", &self.sigma_eta)] {
            let asym = (m - m.transpose()).abs().max();
            let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
            if asym > 1e-12 * m.abs().max().max(1.0) || min_eig < -1e-12 {
                return Err(ArfiltError::InvalidInput(format!(
                    "{name} must be symmetric positive semidefinite"
                )));
            }
        }
        Ok(())
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }
}

/// Simulates `y(1..=len(x))` from inputs `x(0..len(x))`, starting at `h(0) = h0`.
pub fn simulate_lds(spec: &LdsSpec, x: &[f64], seed: u64, h0: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    ensure_finite(x, "input")?;
    let d = spec.state_dim();
    if h0.len() != d {
        return Err(ArfiltError::InvalidInput(format!(
            "initial state has length {}, expected {d}",
            h0.len()
        )));
    }
    let xi_sqrt = psd_sqrt(&spec.sigma_xi);
    let eta_sd = spec.sigma_eta[(0, 0)].max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = DVector::from_column_slice(h0);
    let b = spec.b.column(0).into_owned();
    let c = spec.c.row(0).transpose();
    let mut y = Vec::with_capacity(x.len());
    for &xt in x {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        h = &spec.a * h + &b * xt + &xi_sqrt * z;
        let e: f64 = StandardNormal.sample(&mut rng);
        y.push(c.dot(&h) + eta_sd * e);
    }
    Ok(y)
}

/// Steady-state Kalman predictor matrices and covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanGains {
    #[serde(with = "rows")]
    pub a_kf: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b_kf_x: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b_kf_y: DMatrix<f64>,
    #[serde(with = "rows")]
    pub c_kf: DMatrix<f64>,
    /// Prior state covariance `Sigma_h` (the Riccati fixed point).
    #[serde(with = "rows")]
    pub sigma_h: DMatrix<f64>,
    /// One-step prediction variance `Sigma_y = C Sigma_h Cᵀ + Sigma_eta`.
    pub sigma_y2: f64,
    pub riccati_residual: f64,
    pub iterations: usize,
}

impl KalmanGains {
    /// `Sigma_h` for a scalar state.
    pub fn sigma_h2(&self) -> f64 {
        self.sigma_h[(0, 0)]
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a_kf)
    }
}

/// One Riccati step `P -> A (P - P Cᵀ (C P Cᵀ + Sigma_eta)⁻¹ C P) Aᵀ + Sigma_xi`.
pub fn riccati_step(spec: &LdsSpec, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = &spec.c * p * spec.c.transpose() + &spec.sigma_eta;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| ArfiltError::InvalidInput("innovation covariance is singular".into()))?;
    let pct = p * spec.c.transpose();
    let posterior = p - &pct * s_inv * pct.transpose();
    Ok(&spec.a * posterior * spec.a.transpose() + &spec.sigma_xi)
}

/// Iterates the Riccati map from `P = Sigma_xi` until successive iterates differ
/// by at most `tol` (max-abs entry).
pub fn steady_state_kalman(spec: &LdsSpec, tol: f64, max_iter: usize) -> Result<KalmanGains> {
    spec.validate()?;
    let mut p = spec.sigma_xi.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = riccati_step(spec, &p)?;
        residual = (&next - &p).abs().max();
        p = (&next + next.transpose()) * 0.5;
        iterations += 1;
        if residual <= tol {
            break;
        }
        if !residual.is_finite() {
            break;
        }
    }
    if !(residual <= tol) {
        return Err(ArfiltError::ConvergenceFailure {
            iterations,
            residual,
        });
    }
    let d = spec.state_dim();
    let s = (&spec.c * &p * spec.c.transpose())[(0, 0)] + spec.sigma_eta[(0, 0)];
    let k = &p * spec.c.transpose() / s;
    let a_kf = &spec.a * (DMatrix::identity(d, d) - &k * &spec.c);
    Ok(KalmanGains {
        a_kf,
        b_kf_x: spec.b.clone(),
        b_kf_y: &spec.a * k,
        c_kf: spec.c.clone(),
        sigma_h: p,
        sigma_y2: s,
        riccati_residual: residual,
        iterations,
    })
}

/// One-step-ahead predictions `yhat[t]` of `y[t]` from `x[..t]`, `y[..t]`,
/// starting from a zero predictor state.
pub fn kalman_predict(gains: &KalmanGains, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(ArfiltError::InvalidInput(format!(
            "input length {} differs from output length {}",
            x.len(),
            y.len()
        )));
    }
    let d = gains.a_kf.nrows();
    let bx = gains.b_kf_x.column(0).into_owned();
    let by = gains.b_kf_y.column(0).into_owned();
    let c = gains.c_kf.row(0).transpose();
    let mut s = DVector::zeros(d);
    let mut out = Vec::with_capacity(x.len());
    for (&xt, &yt) in x.iter().zip(y) {
        out.push(c.dot(&s));
        s = &gains.a_kf * s + &bx * xt + &by * yt;
    }
    Ok(out)
}

/// Autoregressive form of the steady-state Kalman predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnrolledKalman {
    pub g_star: Filter,
    pub h_star: Filter,
    /// Innovation variance of the autoregressive model.
    pub sigma2: f64,
}

/// `g*(k) = C A^k B_x`, `h*(k) = C A^k B_y` for `k < r`.
pub fn unroll_kalman(gains: &KalmanGains, r: usize) -> Result<UnrolledKalman> {
    if r == 0 {
        return Err(ArfiltError::InvalidInput(
            "filter length must be positive".into(),
        ));
    }
    let rho = gains.spectral_radius();
    if !(rho < 1.0) {
        return Err(ArfiltError::Instability(format!(
            "A_kf has spectral radius {rho} >= 1"
        )));
    }
    let c = gains.c_kf.row(0).transpose();
    let mut vx = gains.b_kf_x.column(0).into_owned();
    let mut vy = gains.b_kf_y.column(0).into_owned();
    let mut g = Vec::with_capacity(r);
    let mut h = Vec::with_capacity(r);
    for _ in 0..r {
        g.push(c.dot(&vx));
        h.push(c.dot(&vy));
        vx = &gains.a_kf * vx;
        vy = &gains.a_kf * vy;
    }
    Ok(UnrolledKalman {
        g_star: Filter::new(g)?,
        h_star: Filter::new(h)?,
        sigma2: gains.sigma_y2,
    })
}

/// Numerator and denominator coefficients (in `w = z^-1`) of
/// `C (I - A w)^-1 B = N(w) / D(w)`, by Faddeev-LeVerrier.
pub fn state_space_rational(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let d = a.nrows();
    let mut den = vec![1.0];
    let mut num = Vec::with_capacity(d);
    let mut m = DMatrix::<f64>::identity(d, d);
    for k in 1..=d {
        num.push((c * &m * b)[(0, 0)]);
        let am = a * &m;
        let ck = -am.trace() / k as f64;
        den.push(ck);
        m = am + DMatrix::identity(d, d) * ck;
    }
    (num, den)
}

/// Truncation length after which both unrolled Kalman filters have l1 tail at
/// most `epsilon`, from the stability radius of `A_kf`.
pub fn kalman_sufficient_length(gains: &KalmanGains, epsilon: f64) -> Result<usize> {
    let rho = gains.spectral_radius();
    if !(rho < 1.0) {
        return Err(ArfiltError::Instability(format!(
            "A_kf has spectral radius {rho} >= 1"
        )));
    }
    let est = StabilityEstimate::log_spaced(rho.max(1e-9), signal::DEFAULT_GAMMA_POINTS)?;
    let mut len = 1;
    for b in [&gains.b_kf_x, &gains.b_kf_y] {
        let (num, den) = state_space_rational(&gains.a_kf, b, &gains.c_kf);
        let n = 1024.max(16 * den.len());
        let l = signal::sufficient_length(
            &est,
            |g| signal::rational_scaled_hinf_norm(&num, &den, g, n),
            epsilon,
        )?;
        len = len.max(l);
    }
    Ok(len)
}

/// Closed-form comparison of the optimal (autoregressive) predictor against an
/// input-only predictor on [`LdsSpec::appendix_a`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirVsAr {
    pub rho: f64,
    pub sigma_h2: f64,
    pub ar_err: f64,
    pub fir_err: f64,
    pub ratio: f64,
}

pub fn fir_vs_ar_example(rho: f64) -> Result<FirVsAr> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ArfiltError::InvalidInput(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    let r2 = rho * rho;
    let sigma_h2 = (r2 + (r2 * r2 + 4.0).sqrt()) / 2.0;
    let ar_err = sigma_h2 + 1.0;
    let fir_err = 1.0 + 1.0 / (1.0 - r2);
    Ok(FirVsAr {
        rho,
        sigma_h2,
        ar_err,
        fir_err,
        ratio: fir_err / ar_err,
    })
}
