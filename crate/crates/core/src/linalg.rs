//! Dense linear-algebra helpers shared by the estimators and the Kalman code.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff for every pseudoinverse in the crate.
pub const PINV_RCOND: f64 = 1e-10;

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if a.nrows() == 1 {
        return a[(0, 0)].abs();
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0, |m, z| m.max(z.norm()))
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD. Accurate for the small, possibly rank-deficient
/// triangular factors used throughout the crate.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let n = a.ncols();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for m in [&mut u, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - sn * y;
                        m[(i, q)] = sn * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s = DVector::zeros(n);
    for j in 0..n {
        let norm = u.column(j).norm();
        s[j] = norm;
        if norm > 0.0 {
            u.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    Svd { u, s, v }
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = svd(a).s.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Minimum-norm least-squares solution of `a x = b` by SVD.
#[derive(Clone, Debug)]
pub struct PinvSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub sigma_max: f64,
    pub sigma_min_kept: f64,
}

impl PinvSolution {
    /// `sigma_max / sigma_min_kept`, infinite for a zero system.
    pub fn condition(&self) -> f64 {
        if self.rank == 0 {
            f64::INFINITY
        } else {
            self.sigma_max / self.sigma_min_kept
        }
    }
}

pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> PinvSolution {
    let n = a.ncols();
    let dec = svd(a);
    let sigma_max = dec.s.iter().fold(0.0f64, |m, &s| m.max(s));
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    let mut sigma_min_kept = f64::INFINITY;
    if sigma_max > 0.0 {
        let cutoff = PINV_RCOND * sigma_max;
        for (i, &s) in dec.s.iter().enumerate() {
            if s > cutoff {
                let coef = dec.u.column(i).dot(b) / s;
                x += dec.v.column(i) * coef;
                rank += 1;
                sigma_min_kept = sigma_min_kept.min(s);
            }
        }
    }
    PinvSolution {
        x,
        rank,
        sigma_max,
        sigma_min_kept,
    }
}

/// Square-root (triangular) form of a stacked least-squares system.
///
/// Keeps an upper-triangular `R` with `RᵀR = AᵀA` for all rows `A` pushed so
/// far, so residual norms `‖A v‖` can be evaluated as `‖R v‖` without forming
/// the Gram matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SqrtAccumulator {
    r: DMatrix<f64>,
}

impl SqrtAccumulator {
    pub fn new(cols: usize) -> Self {
        SqrtAccumulator {
            r: DMatrix::zeros(cols, cols),
        }
    }

    pub fn cols(&self) -> usize {
        self.r.ncols()
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn push_rows(&mut self, rows: &DMatrix<f64>) {
        assert_eq!(rows.ncols(), self.cols(), "row width mismatch");
        if rows.nrows() == 0 {
            return;
        }
        let p = self.cols();
        let mut stacked = DMatrix::zeros(p + rows.nrows(), p);
        stacked.view_mut((0, 0), (p, p)).copy_from(&self.r);
        stacked.view_mut((p, 0), (rows.nrows(), p)).copy_from(rows);
        self.r = triangular_factor(stacked);
    }

    pub fn merge(&mut self, other: &SqrtAccumulator) {
        self.push_rows(&other.r);
    }

    /// Gram matrix `RᵀR`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.r.transpose() * &self.r
    }
}

fn triangular_factor(a: DMatrix<f64>) -> DMatrix<f64> {
    let p = a.ncols();
    let r = a.qr().r();
    if r.nrows() == p {
        r
    } else {
        let mut full = DMatrix::zeros(p, p);
        full.view_mut((0, 0), (r.nrows(), p)).copy_from(&r);
        full
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped to zero).
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}
