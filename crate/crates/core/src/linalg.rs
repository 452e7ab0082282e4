//! Dense helpers shared by the analysis step and the identity battery.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Eigenvalues of `I + input` are clamped at this floor before the -1/2 power.
pub const EIGEN_FLOOR: f64 = 1e-14;

/// Absolute floor used when a residual is normalized by a magnitude.
pub const MAGNITUDE_FLOOR: f64 = 1e-14;

const SYMMETRY_TOL: f64 = 1e-10;

/// Relative Frobenius distance `|a - b| / max(|a|, |b|, 1e-14)`.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm()).max(MAGNITUDE_FLOOR);
    (a - b).norm() / scale
}

pub fn relative_gap_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm().max(b.norm()).max(MAGNITUDE_FLOOR);
    (a - b).norm() / scale
}

/// Largest entrywise asymmetry relative to the largest entry.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(MAGNITUDE_FLOOR);
    (a - a.transpose()).amax() / scale
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
    }
    Ok(())
}

pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, Dyn>> {
    check_square(a)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    SymmetricEigen::try_new(symmetrize(a), f64::EPSILON, 0).ok_or(Error::EigenFailure)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(symmetric_eigen(a)?.eigenvalues.min())
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(symmetric_eigen(a)?.eigenvalues.max())
}

/// Returns `(I + input)^{-1/2}` for a symmetric positive semidefinite `input`.
///
/// The zero matrix maps to the identity exactly.
pub fn symmetric_inverse_sqrt(input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(input)?;
    let n = input.nrows();
    if input.iter().all(|&x| x == 0.0) {
        return Ok(DMatrix::identity(n, n));
    }
    let skew = asymmetry(input);
    if !(skew <= SYMMETRY_TOL) {
        return Err(Error::NotSymmetric(skew));
    }
    let eig = symmetric_eigen(input)?;
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -SYMMETRY_TOL * scale) {
        return Err(Error::NotPositiveDefinite);
    }
    let powered = eig.eigenvalues.map(|l| 1.0 / libm::sqrt((1.0 + l).max(EIGEN_FLOOR)));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&powered) * q.transpose();
    Ok(symmetrize(&out))
}

/// `A^{-1/2}` for a symmetric positive-definite `A`.
pub fn inverse_sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a)?;
    let eig = symmetric_eigen(a)?;
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let powered = eig.eigenvalues.map(|l| 1.0 / libm::sqrt(l));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&powered) * q.transpose())))
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    check_square(a)?;
    Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite)
}

/// Inverse of a general square matrix.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a)?;
    a.clone().try_inverse().ok_or(Error::Singular)
}
