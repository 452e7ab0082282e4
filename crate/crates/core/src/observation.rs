//! Linear observation model `y = H u + xi`, `xi ~ N(0, Gamma)`, and seeded
//! synthetic observations.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::rng::{self, Purpose};
use crate::{Error, Result, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationOperator {
    Identity { dim: usize },
    Matrix(DMatrix<f64>),
}

impl ObservationOperator {
    pub fn identity(dim: usize) -> Self {
        ObservationOperator::Identity { dim }
    }

    pub fn matrix(h: DMatrix<f64>) -> Result<Self> {
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ObservationOperator::Matrix(h))
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ObservationOperator::Identity { dim } => *dim,
            ObservationOperator::Matrix(h) => h.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ObservationOperator::Identity { dim } => *dim,
            ObservationOperator::Matrix(h) => h.nrows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ObservationOperator::Identity { .. })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            ObservationOperator::Identity { dim } => DMatrix::identity(*dim, *dim),
            ObservationOperator::Matrix(h) => h.clone(),
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), found: u.len() });
        }
        Ok(match self {
            ObservationOperator::Identity { .. } => u.clone(),
            ObservationOperator::Matrix(h) => h * u,
        })
    }

    /// Applies `H` to every column.
    pub fn apply_columns(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), found: x.nrows() });
        }
        Ok(match self {
            ObservationOperator::Identity { .. } => x.clone(),
            ObservationOperator::Matrix(h) => h * x,
        })
    }
}

/// Observation-noise covariance `Gamma`, always positive definite.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCovariance {
    /// `gamma^2 I_d`.
    ScaledIdentity { gamma: f64, dim: usize },
    /// General SPD matrix together with its lower Cholesky factor `L`, `Gamma = L L^T`.
    Matrix { covariance: DMatrix<f64>, factor: DMatrix<f64> },
}

impl NoiseCovariance {
    pub fn scaled_identity(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter("noise scale gamma must be positive and finite"));
        }
        Ok(NoiseCovariance::ScaledIdentity { gamma, dim })
    }

    /// Validates symmetry and positive definiteness.
    pub fn matrix(covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != covariance.ncols() {
            return Err(Error::DimensionMismatch { expected: covariance.nrows(), found: covariance.ncols() });
        }
        if covariance.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let skew = linalg::asymmetry(&covariance);
        if skew > 1e-12 {
            return Err(Error::NotSymmetric(skew));
        }
        let covariance = linalg::symmetrize(&covariance);
        if !(linalg::min_eigenvalue(&covariance)? > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let factor = linalg::cholesky(&covariance)?.l();
        Ok(NoiseCovariance::Matrix { covariance, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseCovariance::ScaledIdentity { dim, .. } => *dim,
            NoiseCovariance::Matrix { covariance, .. } => covariance.nrows(),
        }
    }

    /// `gamma` for the scaled-identity case.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            NoiseCovariance::ScaledIdentity { gamma, .. } => Some(*gamma),
            NoiseCovariance::Matrix { .. } => None,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            NoiseCovariance::ScaledIdentity { gamma, dim } => DMatrix::identity(*dim, *dim) * (gamma * gamma),
            NoiseCovariance::Matrix { covariance, .. } => covariance.clone(),
        }
    }

    /// `L^{-1} x` column-wise, so that `(L^{-1}a)^T (L^{-1}b) = a^T Gamma^{-1} b`.
    pub fn whiten(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.nrows() });
        }
        match self {
            NoiseCovariance::ScaledIdentity { gamma, .. } => Ok(x / *gamma),
            NoiseCovariance::Matrix { factor, .. } => {
                factor.solve_lower_triangular(x).ok_or(Error::Singular)
            }
        }
    }

    pub fn whiten_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let col = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        Ok(self.whiten(&col)?.column(0).into_owned())
    }

    /// `Gamma^{-1} x` column-wise.
    pub fn inverse_apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            NoiseCovariance::ScaledIdentity { gamma, .. } => {
                if x.nrows() != self.dim() {
                    return Err(Error::DimensionMismatch { expected: self.dim(), found: x.nrows() });
                }
                Ok(x / (gamma * gamma))
            }
            NoiseCovariance::Matrix { factor, .. } => {
                let w = self.whiten(x)?;
                factor.tr_solve_lower_triangular(&w).ok_or(Error::Singular)
            }
        }
    }

    /// Maps a standard normal vector to a draw with covariance `Gamma`.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseCovariance::ScaledIdentity { gamma, .. } => z * *gamma,
            NoiseCovariance::Matrix { factor, .. } => factor * z,
        }
    }
}

/// Observation operator paired with its noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub operator: ObservationOperator,
    pub noise: NoiseCovariance,
}

impl ObservationModel {
    pub fn new(operator: ObservationOperator, noise: NoiseCovariance) -> Result<Self> {
        if operator.output_dim() != noise.dim() {
            return Err(Error::DimensionMismatch { expected: operator.output_dim(), found: noise.dim() });
        }
        Ok(Self { operator, noise })
    }

    /// `H = I_m`, `Gamma = gamma^2 I_m`.
    pub fn fully_observed(gamma: f64, m: usize) -> Result<Self> {
        Self::new(ObservationOperator::identity(m), NoiseCovariance::scaled_identity(gamma, m)?)
    }

    /// `Some(gamma)` when `H = I` and `Gamma = gamma^2 I`.
    pub fn fully_observed_gamma(&self) -> Option<f64> {
        if self.operator.is_identity() {
            self.noise.gamma()
        } else {
            None
        }
    }

    pub fn state_dim(&self) -> usize {
        self.operator.state_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.operator.output_dim()
    }
}

/// Seed path of one replicate's observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub run_seed: u64,
    pub replicate_id: u64,
}

impl NoiseStream {
    pub fn new(run_seed: u64, replicate_id: u64) -> Self {
        Self { run_seed, replicate_id }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub step: usize,
    pub value: DVector<f64>,
    /// `(run_seed, replicate_id, step)`.
    pub seed_path: (u64, u64, u64),
}

/// Draws `xi_step ~ N(0, Gamma)`; the same seed path always yields the same vector.
pub fn sample_noise(stream: &NoiseStream, step: usize, noise: &NoiseCovariance) -> DVector<f64> {
    let mut rng = rng::stream_rng(stream.run_seed, Purpose::ObservationNoise, stream.replicate_id, step as u64);
    let z = DVector::from_fn(noise.dim(), |_, _| rng::standard_normal(&mut rng));
    noise.color(&z)
}

pub fn observe(
    u: &StateVector,
    model: &ObservationModel,
    stream: &NoiseStream,
    step: usize,
) -> Result<ObservationRecord> {
    let value = model.operator.apply(u)? + sample_noise(stream, step, &model.noise);
    if value.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(ObservationRecord { step, value, seed_path: (stream.run_seed, stream.replicate_id, step as u64) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    #[test]
    fn tiny_noise_scale() {
        let noise = NoiseCovariance::scaled_identity(1e-12, 100).unwrap();
        let stream = NoiseStream::new(5, 0);
        for step in 1..20 {
            assert!(sample_noise(&stream, step, &noise).norm() <= 1e-10);
        }
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(NoiseCovariance::scaled_identity(0.0, 2).is_err());
        assert!(NoiseCovariance::scaled_identity(-1.0, 2).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(NoiseCovariance::matrix(indefinite), Err(Error::NotPositiveDefinite));
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(NoiseCovariance::matrix(skew), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn observe_nearly_exact() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let model = ObservationModel::fully_observed(1e-12, 3).unwrap();
        let rec = observe(&u, &model, &NoiseStream::new(1, 2), 3).unwrap();
        assert!((rec.value - &u).amax() <= 1e-10);
        assert_eq!(rec.seed_path, (1, 2, 3));
    }

    #[test]
    fn zero_operator_returns_noise() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let noise = NoiseCovariance::scaled_identity(0.7, 2).unwrap();
        let model = ObservationModel::new(ObservationOperator::matrix(DMatrix::zeros(2, 3)).unwrap(), noise.clone()).unwrap();
        let stream = NoiseStream::new(8, 1);
        let rec = observe(&u, &model, &stream, 4).unwrap();
        assert_eq!(rec.value, sample_noise(&stream, 4, &noise));
    }

    #[test]
    fn replay_is_identical() {
        let u = DVector::from_vec(vec![1.0, 2.0]);
        let model = ObservationModel::fully_observed(0.3, 2).unwrap();
        let stream = NoiseStream::new(77, 4);
        assert_eq!(observe(&u, &model, &stream, 9).unwrap(), observe(&u, &model, &stream, 9).unwrap());
    }

    #[test]
    fn fully_observed_matches_general_path() {
        let gamma = 0.37;
        let m = 4;
        let special = ObservationModel::fully_observed(gamma, m).unwrap();
        let general = ObservationModel::new(
            ObservationOperator::matrix(DMatrix::identity(m, m)).unwrap(),
            NoiseCovariance::matrix(DMatrix::identity(m, m) * (gamma * gamma)).unwrap(),
        )
        .unwrap();
        let u = DVector::from_vec(vec![0.5, -1.0, 2.0, 3.0]);
        let stream = NoiseStream::new(3, 0);
        for step in 1..50 {
            let a = observe(&u, &special, &stream, step).unwrap().value;
            let b = observe(&u, &general, &stream, step).unwrap().value;
            assert!((a - b).amax() <= 1e-14);
        }
    }

    #[test]
    fn whiten_and_inverse_agree() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let noise = NoiseCovariance::matrix(cov.clone()).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -2.0, 3.0]);
        let direct = cov.clone().try_inverse().unwrap() * &x;
        assert!(linalg::relative_gap(&noise.inverse_apply(&x).unwrap(), &direct) < 1e-14);
        let w = noise.whiten(&x).unwrap();
        assert!(linalg::relative_gap(&(w.transpose() * &w), &(x.transpose() * &direct)) < 1e-14);
    }
}
