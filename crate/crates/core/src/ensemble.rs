//! Ensembles of state vectors and their algebra.
//!
//! An ensemble of `N` states in dimension `m` is stored as an `m x N`
//! matrix whose column `n` is member `n`. Right-multiplication by an
//! `N x N` matrix `T` mixes members: output member `n` is
//! `sum_k v_k T[k, n]`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::linalg;
use crate::{Error, Result};

pub type StateVector = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    /// Builds an ensemble from an `m x N` matrix of member columns.
    pub fn from_columns(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Size(members.ncols()));
        }
        if members.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[StateVector]) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Size(0));
        };
        let m = first.len();
        if let Some(bad) = members.iter().find(|v| v.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
        }
        Self::from_columns(DMatrix::from_columns(members))
    }

    /// `N` copies of `u`.
    pub fn constant(u: &StateVector, n: usize) -> Result<Self> {
        Self::from_columns(DMatrix::from_fn(u.len(), n, |i, _| u[i]))
    }

    /// `mean 1 + deviations`.
    pub fn from_mean_and_deviations(mean: &StateVector, deviations: &Ensemble) -> Result<Self> {
        if mean.len() != deviations.dim() {
            return Err(Error::DimensionMismatch { expected: deviations.dim(), found: mean.len() });
        }
        let mut members = deviations.members.clone();
        for mut col in members.column_iter_mut() {
            col += mean;
        }
        Self::from_columns(members)
    }

    /// State dimension `m`.
    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    /// Number of members `N`.
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn member(&self, n: usize) -> DVectorView<'_, f64> {
        self.members.column(n)
    }

    pub fn members(&self) -> impl Iterator<Item = DVectorView<'_, f64>> {
        self.members.column_iter()
    }

    pub fn to_members(&self) -> Vec<StateVector> {
        self.members().map(|c| c.into_owned()).collect()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.members
    }

    pub fn mean(&self) -> StateVector {
        self.members.column_sum() / self.size() as f64
    }

    /// `dV = V - mean 1`; the columns sum to zero up to rounding.
    pub fn deviations(&self) -> Ensemble {
        let mean = self.mean();
        let mut dev = self.members.clone();
        for mut col in dev.column_iter_mut() {
            col -= &mean;
        }
        Ensemble { members: dev }
    }

    /// Unbiased ensemble covariance `dV dV^* / (N - 1)`.
    pub fn covariance(&self) -> Covariance {
        let dev = self.deviations();
        let c = &dev.members * dev.members.transpose() / (self.size() - 1) as f64;
        Covariance(linalg::symmetrize(&c))
    }

    /// `(1/N sum_n |v_n|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.l2_norm_sq())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.members.norm_squared() / self.size() as f64
    }

    /// `N x N` matrix of inner products `<u_i, v_j>`.
    pub fn gram(&self, other: &Ensemble) -> Result<DMatrix<f64>> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(self.members.transpose() * &other.members)
    }

    /// Member `n` of the result is `sum_k v_k T[k, n]`.
    pub fn apply_matrix(&self, t: &DMatrix<f64>) -> Result<Ensemble> {
        if t.nrows() != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), found: t.nrows() });
        }
        Ensemble::from_columns(&self.members * t)
    }

    /// Every member scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Ensemble> {
        Ensemble::from_columns(&self.members * factor)
    }

    /// `V - u 1`.
    pub fn offset_by(&self, u: &StateVector) -> Result<Ensemble> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: u.len() });
        }
        let mut members = self.members.clone();
        for mut col in members.column_iter_mut() {
            col -= u;
        }
        Ensemble::from_columns(members)
    }

    /// Largest member norm.
    pub fn max_member_norm(&self) -> f64 {
        self.members().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Symmetric positive semidefinite `m x m` covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance(DMatrix<f64>);

impl Covariance {
    /// Wraps a symmetric matrix; asymmetry is averaged away.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        let skew = linalg::asymmetry(&matrix);
        if skew > 1e-12 {
            return Err(Error::NotSymmetric(skew));
        }
        Ok(Covariance(linalg::symmetrize(&matrix)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, factor: f64) -> Covariance {
        Covariance(&self.0 * factor)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        linalg::min_eigenvalue(&self.0)
    }

    pub fn eigenvalues(&self) -> Result<DVector<f64>> {
        Ok(linalg::symmetric_eigen(&self.0)?.eigenvalues)
    }
}
