//! ETKF analysis step.
//!
//! Two equivalent routes are provided. The covariance form materializes the
//! forecast covariance, computes the Kalman gain, updates the mean and
//! transforms the inflated deviations with the symmetric transform matrix
//! `T = (I_N + alpha^2/(N-1) dV^T H^T Gamma^{-1} H dV)^{-1/2}`. The
//! transform form never builds an `m x m` matrix: it folds the mean update
//! into a single `N x N` matrix `T~ = T^2 w 1 + T` applied to the inflated
//! deviations.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{Covariance, Ensemble, StateVector};
use crate::linalg;
use crate::observation::{ObservationModel, ObservationOperator};
use crate::{Error, Result};

/// Largest state dimension accepted by the covariance form.
pub const DEFAULT_COVARIANCE_CAPACITY: usize = 512;

/// Multiplicative inflation factor `alpha >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct InflationFactor(f64);

impl InflationFactor {
    pub const NONE: InflationFactor = InflationFactor(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidInflation(alpha));
        }
        Ok(InflationFactor(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for InflationFactor {
    fn default() -> Self {
        InflationFactor::NONE
    }
}

/// Symmetric positive-definite `N x N` transform with `T 1 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix(DMatrix<f64>);

impl TransformMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnalysisForm {
    /// Explicit covariance, gain and mean update.
    Covariance,
    /// `N x N` transform only.
    #[default]
    Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDiagnostics {
    pub analysis_covariance: Covariance,
    /// Minimum eigenvalue of the un-inflated forecast covariance.
    pub forecast_min_eigenvalue: f64,
    pub analysis_min_eigenvalue: f64,
}

impl AnalysisDiagnostics {
    pub fn from_ensembles(forecast: &Ensemble, analysis: &Ensemble) -> Result<Self> {
        let analysis_covariance = analysis.covariance();
        Ok(Self {
            forecast_min_eigenvalue: forecast.covariance().min_eigenvalue()?,
            analysis_min_eigenvalue: analysis_covariance.min_eigenvalue()?,
            analysis_covariance,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    pub analysis: Ensemble,
    /// False when the gain vanished (zero forecast spread).
    pub kalman_gain_applied: bool,
    pub transform: TransformMatrix,
    /// Always present for the covariance form; the transform form leaves it empty.
    pub diagnostics: Option<AnalysisDiagnostics>,
}

/// `mean + alpha dV`; `alpha = 1` returns the input unchanged.
pub fn inflate(forecast: &Ensemble, alpha: InflationFactor) -> Ensemble {
    if alpha == InflationFactor::NONE {
        return forecast.clone();
    }
    let mean = forecast.mean();
    let mut members = forecast.deviations().into_matrix() * alpha.value();
    for mut col in members.column_iter_mut() {
        col += &mean;
    }
    Ensemble::from_columns(members).expect("inflation of a finite ensemble by a finite factor is finite")
}

/// `K = C H^T (H C H^T + Gamma)^{-1}`, via a Cholesky solve of the innovation covariance.
pub fn kalman_gain(covariance: &Covariance, obs: &ObservationModel) -> Result<DMatrix<f64>> {
    let m = covariance.dim();
    if m != obs.state_dim() {
        return Err(Error::DimensionMismatch { expected: obs.state_dim(), found: m });
    }
    let hc = obs.operator.apply_columns(covariance.matrix())?; // d x m, = H C
    let hch = obs.operator.apply_columns(&hc.transpose())?; // d x d
    let innovation = linalg::symmetrize(&(hch + obs.noise.to_matrix()));
    let chol = nalgebra::Cholesky::new(innovation).ok_or(Error::Singular)?;
    // S K^T = H C
    Ok(chol.solve(&hc).transpose())
}

/// `mean + K (y - H mean)`.
pub fn mean_update(
    prior_mean: &StateVector,
    y: &DVector<f64>,
    gain: &DMatrix<f64>,
    operator: &ObservationOperator,
) -> Result<StateVector> {
    if gain.nrows() != prior_mean.len() {
        return Err(Error::DimensionMismatch { expected: prior_mean.len(), found: gain.nrows() });
    }
    if gain.ncols() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), found: gain.ncols() });
    }
    let innovation = y - operator.apply(prior_mean)?;
    if innovation.len() != gain.ncols() {
        return Err(Error::DimensionMismatch { expected: gain.ncols(), found: innovation.len() });
    }
    Ok(prior_mean + gain * innovation)
}

/// Whitened observed deviations `Gamma^{-1/2} H (alpha dV)`.
fn whitened_deviations(deviations: &Ensemble, obs: &ObservationModel, alpha: InflationFactor) -> Result<DMatrix<f64>> {
    if deviations.dim() != obs.state_dim() {
        return Err(Error::DimensionMismatch { expected: obs.state_dim(), found: deviations.dim() });
    }
    let observed = obs.operator.apply_columns(deviations.as_matrix())?;
    Ok(obs.noise.whiten(&observed)? * alpha.value())
}

fn transform_from_whitened(white: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = white.ncols();
    let g = white.transpose() * white / (n - 1) as f64;
    linalg::symmetric_inverse_sqrt(&linalg::symmetrize(&g))
}

/// `T = (I_N + alpha^2/(N-1) dV^T H^T Gamma^{-1} H dV)^{-1/2}` for centered `deviations`.
pub fn transform_matrix(
    deviations: &Ensemble,
    obs: &ObservationModel,
    alpha: InflationFactor,
) -> Result<TransformMatrix> {
    let white = whitened_deviations(deviations, obs, alpha)?;
    Ok(TransformMatrix(transform_from_whitened(&white)?))
}

fn check_observation(y: &DVector<f64>, obs: &ObservationModel) -> Result<()> {
    if y.len() != obs.output_dim() {
        return Err(Error::DimensionMismatch { expected: obs.output_dim(), found: y.len() });
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Covariance form with the default capacity.
pub fn analysis_step_covariance_form(
    forecast: &Ensemble,
    y: &DVector<f64>,
    obs: &ObservationModel,
    alpha: InflationFactor,
) -> Result<AnalysisOutput> {
    analysis_step_covariance_form_with_capacity(forecast, y, obs, alpha, DEFAULT_COVARIANCE_CAPACITY)
}

pub fn analysis_step_covariance_form_with_capacity(
    forecast: &Ensemble,
    y: &DVector<f64>,
    obs: &ObservationModel,
    alpha: InflationFactor,
    capacity: usize,
) -> Result<AnalysisOutput> {
    let m = forecast.dim();
    if m > capacity {
        return Err(Error::Capacity { m, capacity });
    }
    if m != obs.state_dim() {
        return Err(Error::DimensionMismatch { expected: obs.state_dim(), found: m });
    }
    check_observation(y, obs)?;

    let a2 = alpha.value() * alpha.value();
    let prior_mean = forecast.mean();
    let deviations = forecast.deviations();
    let forecast_cov = forecast.covariance();
    let inflated_cov = forecast_cov.scaled(a2);

    let gain = kalman_gain(&inflated_cov, obs)?;
    let mean = mean_update(&prior_mean, y, &gain, &obs.operator)?;
    let transform = transform_matrix(&deviations, obs, alpha)?;
    let new_deviations = deviations.scaled(alpha.value())?.apply_matrix(transform.matrix())?;
    let analysis = Ensemble::from_mean_and_deviations(&mean, &new_deviations)?;

    let analysis_covariance = analysis.covariance();
    let diagnostics = AnalysisDiagnostics {
        forecast_min_eigenvalue: forecast_cov.min_eigenvalue()?,
        analysis_min_eigenvalue: analysis_covariance.min_eigenvalue()?,
        analysis_covariance,
    };
    Ok(AnalysisOutput {
        analysis,
        kalman_gain_applied: gain.iter().any(|&k| k != 0.0),
        transform,
        diagnostics: Some(diagnostics),
    })
}

/// Transform form: `V = mean 1 + (alpha dV) (T^2 w 1 + T)` with
/// `w = (alpha dV)^T H^T Gamma^{-1} (y - H mean) / (N - 1)`.
pub fn analysis_step_transform_form(
    forecast: &Ensemble,
    y: &DVector<f64>,
    obs: &ObservationModel,
    alpha: InflationFactor,
) -> Result<AnalysisOutput> {
    check_observation(y, obs)?;
    let n = forecast.size();
    let prior_mean = forecast.mean();
    let deviations = forecast.deviations();
    let white = whitened_deviations(&deviations, obs, alpha)?;
    let t = transform_from_whitened(&white)?;

    let innovation = y - obs.operator.apply(&prior_mean)?;
    let white_innovation = obs.noise.whiten_vector(&innovation)?;
    let weights = &t * (&t * (white.transpose() * white_innovation)) / (n - 1) as f64;

    let mut mixing = t.clone();
    for mut col in mixing.column_iter_mut() {
        col += &weights;
    }
    let inflated = deviations.scaled(alpha.value())?;
    let moved = inflated.apply_matrix(&mixing)?;
    let analysis = Ensemble::from_mean_and_deviations(&prior_mean, &moved)?;
    Ok(AnalysisOutput {
        analysis,
        kalman_gain_applied: white.iter().any(|&x| x != 0.0),
        transform: TransformMatrix(t),
        diagnostics: None,
    })
}

/// Dispatches on `form`.
pub fn analysis_step(
    form: AnalysisForm,
    forecast: &Ensemble,
    y: &DVector<f64>,
    obs: &ObservationModel,
    alpha: InflationFactor,
) -> Result<AnalysisOutput> {
    match form {
        AnalysisForm::Covariance => analysis_step_covariance_form(forecast, y, obs, alpha),
        AnalysisForm::Transform => analysis_step_transform_form(forecast, y, obs, alpha),
    }
}

/// Fully observed analysis maps each forecast eigenvalue `l` to
/// `alpha^2 l / (1 + alpha^2 l / gamma^2)`.
pub fn analysis_min_eigenvalue_map(lambda_hat: f64, alpha: f64, gamma: f64) -> f64 {
    let a2 = alpha * alpha;
    a2 * lambda_hat / (1.0 + a2 * lambda_hat / (gamma * gamma))
}
