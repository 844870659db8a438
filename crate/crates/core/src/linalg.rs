//! Dense linear-algebra helpers shared by every model.
//!
//! Symmetric positive-definite systems are solved through Cholesky factors.
//! A factorization that fails is retried once with a diagonal jitter of
//! `1e-9 * mean(diag)` before the matrix is declared singular.

use crate::prelude::*;
use nalgebra::{Cholesky, Dyn};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative size of the diagonal jitter used to rescue a failed Cholesky.
pub const JITTER: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn jitter_for(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    let scale = m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n;
    if scale > 0.0 && scale.is_finite() {
        JITTER * scale
    } else {
        JITTER
    }
}

/// Cholesky factor of a symmetric positive-definite matrix, with one jittered retry.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(dim_err!("{what} is {}x{}, expected square", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(singular!("{what} has non-finite entries"));
    }
    let sym = symmetrize(m);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c);
    }
    let eps = jitter_for(&sym);
    let jittered = sym + DMatrix::identity(m.nrows(), m.nrows()) * eps;
    jittered
        .cholesky()
        .ok_or_else(|| singular!("{what} is not positive definite"))
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if rhs.nrows() != m.nrows() {
        return Err(dim_err!(
            "{what}: rhs has {} rows, matrix has {}",
            rhs.nrows(),
            m.nrows()
        ));
    }
    Ok(cholesky(m, what)?.solve(rhs))
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

/// General (non-symmetric) inverse through LU with partial pivoting.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(dim_err!("{what} is {}x{}, expected square", m.nrows(), m.ncols()));
    }
    let inv = m.clone().try_inverse().ok_or_else(|| singular!("{what} is singular"))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(singular!("{what} is numerically singular"));
    }
    Ok(inv)
}

/// Solves `x * m = rhs` for `x` with `m` symmetric positive definite.
pub fn spd_right_solve(rhs: &DMatrix<f64>, m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if rhs.ncols() != m.nrows() {
        return Err(dim_err!(
            "{what}: lhs has {} columns, matrix has {}",
            rhs.ncols(),
            m.nrows()
        ));
    }
    Ok(cholesky(m, what)?.solve(&rhs.transpose()).transpose())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-scores into probabilities; shared constants cancel.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// Cached factorization of a multivariate normal for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct MvnFactor {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl MvnFactor {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>, what: &str) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(dim_err!(
                "{what}: mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            ));
        }
        let chol = cholesky(cov, what)?;
        let log_det = log_det(&chol);
        Ok(Self {
            mean: mean.clone(),
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let mut w = diff.clone();
        // only the lower triangle of l_dirty is read
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w.norm_squared()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis(x))
    }
}

pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(dim_err!("point has length {}, mean has length {}", x.len(), mean.len()));
    }
    Ok(MvnFactor::new(mean, cov, "covariance")?.log_density(x))
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetrize(m).symmetric_eigenvalues()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetric_eigenvalues(m).min()
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols() && min_eigenvalue(m) >= -tol
}

/// Raises every eigenvalue of a symmetric matrix to at least `floor`.
/// Returns the input (symmetrized) untouched when no eigenvalue is below it.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let recon = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&recon)
}

/// Column-wise mean of a data matrix whose rows are samples.
pub fn row_mean(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows().max(1) as f64;
    data.row_sum().transpose() / n
}

/// Maximum-likelihood (1/N) covariance of a data matrix whose rows are samples.
pub fn row_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = row_mean(data);
    let centered = center_rows(data, &mean);
    let n = data.nrows().max(1) as f64;
    symmetrize(&(centered.transpose() * &centered / n))
}

pub fn center_rows(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = data.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Orthonormal basis for the column span of `m` (thin QR).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
///
/// Computed from the sine form `|| (I - Qa Qa') Qb ||_2`, which keeps
/// resolution for nearly coincident subspaces.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(dim_err!(
            "subspace bases are {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    if a.ncols() == 0 {
        return Ok(0.0);
    }
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let sin = residual.singular_values().max().min(1.0);
    Ok(sin.asin())
}

pub fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Precondition(alloc::format!("{what} contains non-finite values")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jittered_cholesky_rescues_psd_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky(&m, "rank one").is_ok());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky(&neg, "indefinite"), Err(Error::Singularity(_))));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn mvn_density_matches_scalar_formula() {
        let x = DVector::from_vec(vec![1.5]);
        let mean = DVector::from_vec(vec![0.5]);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let expected = -0.5 * (LN_2PI + 4f64.ln() + 0.25);
        assert!((mvn_log_density(&x, &mean, &cov).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn principal_angle_of_rotated_plane() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = 0.3f64;
        let b = DMatrix::from_row_slice(3, 1, &[t.cos(), t.sin(), 0.0]);
        assert!((max_principal_angle(&a, &b).unwrap() - t).abs() < 1e-12);
        assert!(max_principal_angle(&a, &(a.clone() * 3.0)).unwrap() < 1e-15);
    }

    #[test]
    fn eigenvalue_floor_only_touches_small_modes() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1e-12]);
        let f = floor_eigenvalues(&m, 1e-6);
        assert!((f[(1, 1)] - 1e-6).abs() < 1e-15);
        assert_eq!(f[(0, 0)], 2.0);
    }
}
