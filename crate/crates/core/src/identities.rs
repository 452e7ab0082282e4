//! Randomized battery of algebraic identities that the ETKF relies on.
//!
//! Each check evaluates both sides independently (the left side through the
//! library code path, the right side through explicit dense inverses) and
//! returns a relative residual. Residuals are normalised by the larger of
//! the two sides and the natural input scale, so identities whose sides are
//! small differences of large quantities are not penalised for cancellation.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::analysis::{self, InflationFactor};
use crate::ensemble::Ensemble;
use crate::linalg::{self, MAGNITUDE_FLOOR};
use crate::observation::{NoiseCovariance, ObservationModel, ObservationOperator};
use crate::rng::{self, Purpose};
use crate::Result;

/// Default pass threshold for relative residuals.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Threshold for the eigenvalue map, which goes through two eigensolves.
pub const EIGENVALUE_MAP_TOLERANCE: f64 = 1e-8;

fn gap_scaled(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(scale).max(MAGNITUDE_FLOOR)
}

fn gap_scaled_vec(a: &DVector<f64>, b: &DVector<f64>, scale: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(scale).max(MAGNITUDE_FLOOR)
}

/// One random test instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub forecast: Ensemble,
    pub h: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub y: DVector<f64>,
    pub alpha: f64,
}

impl Instance {
    pub fn observation(&self) -> Result<ObservationModel> {
        ObservationModel::new(
            ObservationOperator::matrix(self.h.clone())?,
            NoiseCovariance::matrix(self.gamma.clone())?,
        )
    }
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng::standard_normal(rng))
}

fn spd_matrix<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let b = gaussian_matrix(dim, dim, rng);
    &b * b.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.5
}

/// Draws `m in [1, 20]`, `N in [2, 10]`, `d in [1, m]`, random `H`, SPD `Gamma`,
/// forecast ensemble, observation and `alpha in [1, 2]`.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let m = rng.random_range(1..=20usize);
    let n = rng.random_range(2..=10usize);
    let d = rng.random_range(1..=m);
    let mut members = gaussian_matrix(m, n, rng);
    let shift = gaussian_matrix(m, 1, rng);
    for mut col in members.column_iter_mut() {
        col += shift.column(0);
    }
    Instance {
        forecast: Ensemble::from_columns(members).expect("finite ensemble"),
        h: gaussian_matrix(d, m, rng),
        gamma: spd_matrix(d, rng),
        y: DVector::from_fn(d, |_, _| rng::standard_normal(rng)),
        alpha: rng.random_range(1.0..2.0),
    }
}

/// `||V||^2 = |mean|^2 + ||dV||^2`, together with the trace forms
/// `||V||^2 = tr(V^T V) / N = tr(V V^T) / N`.
pub fn l2_decomposition(v: &Ensemble) -> f64 {
    let n = v.size() as f64;
    let direct = v.l2_norm_sq();
    let split = v.mean().norm_squared() + v.deviations().l2_norm_sq();
    let m = v.as_matrix();
    let gram = (m.transpose() * m).trace() / n;
    let outer = (m * m.transpose()).trace() / n;
    let scale = direct.max(MAGNITUDE_FLOOR);
    [split, gram, outer].iter().map(|x| (x - direct).abs() / scale).fold(0.0, f64::max)
}

fn inflated_covariance(inst: &Instance) -> DMatrix<f64> {
    inst.forecast.covariance().matrix() * (inst.alpha * inst.alpha)
}

fn explicit_gain(c: &DMatrix<f64>, h: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = h * c * h.transpose() + gamma;
    Ok(c * h.transpose() * linalg::inverse(&s)?)
}

/// Square-root update reproduces the Kalman covariance:
/// `(alpha dV T)(alpha dV T)^T / (N - 1) = (I - K H) alpha^2 C`.
pub fn transform_covariance_consistency(inst: &Instance) -> Result<f64> {
    let obs = inst.observation()?;
    let alpha = InflationFactor::new(inst.alpha)?;
    let dv = inst.forecast.deviations();
    let t = analysis::transform_matrix(&dv, &obs, alpha)?;
    let x = dv.as_matrix() * inst.alpha * t.matrix();
    let left = &x * x.transpose() / (inst.forecast.size() - 1) as f64;
    let c = inflated_covariance(inst);
    let k = explicit_gain(&c, &inst.h, &inst.gamma)?;
    let m = c.nrows();
    let right = (DMatrix::identity(m, m) - &k * &inst.h) * &c;
    Ok(gap_scaled(&left, &right, c.norm()))
}

/// `K = (I - K H) C H^T Gamma^{-1}`.
pub fn gain_identity(inst: &Instance) -> Result<f64> {
    let obs = inst.observation()?;
    let c = inflated_covariance(inst);
    let k = analysis::kalman_gain(&crate::Covariance::new(c.clone())?, &obs)?;
    let gi = linalg::inverse(&inst.gamma)?;
    let k_explicit = explicit_gain(&c, &inst.h, &inst.gamma)?;
    let m = c.nrows();
    let chg = &c * inst.h.transpose() * gi;
    let right = (DMatrix::identity(m, m) - &k_explicit * &inst.h) * &chg;
    Ok(gap_scaled(&k, &right, chg.norm()))
}

/// `(I + C H^T Gamma^{-1} H) mean = mean_hat + C H^T Gamma^{-1} y`.
pub fn mean_update_information_form(inst: &Instance) -> Result<f64> {
    let obs = inst.observation()?;
    let c = inflated_covariance(inst);
    let k = analysis::kalman_gain(&crate::Covariance::new(c.clone())?, &obs)?;
    let prior = inst.forecast.mean();
    let mean = analysis::mean_update(&prior, &inst.y, &k, &obs.operator)?;
    let m = c.nrows();
    let chg = &c * inst.h.transpose() * linalg::inverse(&inst.gamma)?;
    let left = (DMatrix::identity(m, m) + &chg * &inst.h) * &mean;
    let right = prior + &chg * &inst.y;
    Ok(gap_scaled_vec(&left, &right, 0.0))
}

/// Analysis deviations sum to zero and `T 1 = 1`.
pub fn deviation_and_transform_ones(inst: &Instance) -> Result<f64> {
    let obs = inst.observation()?;
    let alpha = InflationFactor::new(inst.alpha)?;
    let out = analysis::analysis_step_covariance_form(&inst.forecast, &inst.y, &obs, alpha)?;
    let dv = out.analysis.deviations();
    let n = dv.size();
    let ones = DVector::from_element(n, 1.0);
    let sum = dv.as_matrix() * &ones;
    let dev_res = sum.norm() / dv.l2_norm().max(out.analysis.l2_norm()).max(MAGNITUDE_FLOOR);
    let t1 = out.transform.matrix() * &ones;
    let t_res = (&t1 - &ones).norm() / ones.norm();
    Ok(dev_res.max(t_res))
}

/// With `alpha = 1`: `(I + C H^T Gamma^{-1} H) V = V_hat T^{-1} + C H^T Gamma^{-1} y 1^T`.
pub fn transform_representation(inst: &Instance) -> Result<f64> {
    let obs = inst.observation()?;
    let out = analysis::analysis_step_covariance_form(&inst.forecast, &inst.y, &obs, InflationFactor::NONE)?;
    let c = inst.forecast.covariance().into_matrix();
    let m = c.nrows();
    let n = inst.forecast.size();
    let chg = &c * inst.h.transpose() * linalg::inverse(&inst.gamma)?;
    let left = (DMatrix::identity(m, m) + &chg * &inst.h) * out.analysis.as_matrix();
    let t_inv = linalg::inverse(out.transform.matrix())?;
    let forcing = &chg * &inst.y;
    let mut right = inst.forecast.as_matrix() * t_inv;
    for j in 0..n {
        let mut col = right.column_mut(j);
        col += &forcing;
    }
    Ok(gap_scaled(&left, &right, inst.forecast.as_matrix().norm()))
}

/// Fully observed with `Gamma = gamma^2 I` and `N > m`: the analysis minimum
/// eigenvalue is `alpha^2 l / (1 + alpha^2 l / gamma^2)` of the forecast one.
pub fn eigenvalue_map(forecast: &Ensemble, alpha: f64, gamma: f64) -> Result<f64> {
    let m = forecast.dim();
    let obs = ObservationModel::fully_observed(gamma, m)?;
    let y = DVector::zeros(m);
    let out = analysis::analysis_step_covariance_form(forecast, &y, &obs, InflationFactor::new(alpha)?)?;
    let d = out.diagnostics.expect("covariance form reports diagnostics");
    let predicted = analysis::analysis_min_eigenvalue_map(d.forecast_min_eigenvalue, alpha, gamma);
    let got = d.analysis_min_eigenvalue;
    Ok((got - predicted).abs() / got.abs().max(predicted.abs()).max(MAGNITUDE_FLOOR))
}

/// `(I + A)^{-1} = I - (I + A)^{-1} A`.
pub fn inverse_shift_identity(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    let i = DMatrix::identity(n, n);
    let inv = linalg::inverse(&(&i + a))?;
    let right = &i - &inv * a;
    Ok(gap_scaled(&inv, &right, 1.0))
}

/// For symmetric `A >= 0`: `0 <= (A + I)^{-1} A <= I` and `0 <= (A + I)^{-1} <= I`.
/// Returns the largest violation of either ordering (and of the commutation
/// `(A + I)^{-1} A = A (A + I)^{-1}`).
pub fn shifted_inverse_order_bounds(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    let i = DMatrix::identity(n, n);
    let inv = linalg::inverse(&(&i + a))?;
    let left = &inv * a;
    let commute = gap_scaled(&left, &(a * &inv), 1.0);
    let mut worst = commute;
    for m in [linalg::symmetrize(&left), linalg::symmetrize(&inv)] {
        let lo = linalg::min_eigenvalue(&m)?;
        let hi = linalg::max_eigenvalue(&m)?;
        worst = worst.max((-lo).max(0.0)).max((hi - 1.0).max(0.0));
    }
    Ok(worst)
}

/// `(I + V^T Gamma^{-1} V)^{-1} = I - V^T (V V^T + Gamma)^{-1} V`.
pub fn push_through_inverse(v: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    let n = v.ncols();
    let i = DMatrix::identity(n, n);
    let gi = linalg::inverse(gamma)?;
    let left = linalg::inverse(&(&i + v.transpose() * gi * v))?;
    let right = &i - v.transpose() * linalg::inverse(&(v * v.transpose() + gamma))? * v;
    Ok(gap_scaled(&left, &right, 1.0))
}

/// `(I + V^T Gamma^{-1} V)^{-1} V^T Gamma^{-1} = V^T (V V^T + Gamma)^{-1}`.
pub fn push_through_gain(v: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<f64> {
    let n = v.ncols();
    let i = DMatrix::identity(n, n);
    let gi = linalg::inverse(gamma)?;
    let left = linalg::inverse(&(&i + v.transpose() * &gi * v))? * v.transpose() * &gi;
    let right = v.transpose() * linalg::inverse(&(v * v.transpose() + gamma))?;
    Ok(gap_scaled(&left, &right, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResult {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl IdentityResult {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub seed: u64,
    pub results: Vec<IdentityResult>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(IdentityResult::passed)
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    trials: usize,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Tally { name, tolerance, worst: 0.0, trials: 0 }
    }

    fn push(&mut self, r: Result<f64>) {
        self.trials += 1;
        // a failed evaluation counts as an infinite residual
        let r = r.unwrap_or(f64::INFINITY);
        self.worst = if r.is_nan() { f64::INFINITY } else { self.worst.max(r) };
    }

    fn finish(self) -> IdentityResult {
        IdentityResult { name: self.name, max_residual: self.worst, tolerance: self.tolerance, trials: self.trials }
    }
}

/// Runs every identity on `trials` random instances drawn from `seed`.
pub fn verify_identities(seed: u64, trials: usize) -> IdentityReport {
    let mut tallies = [
        Tally::new("l2_norm_decomposition", IDENTITY_TOLERANCE),
        Tally::new("transform_covariance_consistency", IDENTITY_TOLERANCE),
        Tally::new("gain_identity", IDENTITY_TOLERANCE),
        Tally::new("mean_update_information_form", IDENTITY_TOLERANCE),
        Tally::new("deviation_and_transform_ones", IDENTITY_TOLERANCE),
        Tally::new("transform_representation", IDENTITY_TOLERANCE),
        Tally::new("eigenvalue_map", EIGENVALUE_MAP_TOLERANCE),
        Tally::new("inverse_shift_identity", IDENTITY_TOLERANCE),
        Tally::new("shifted_inverse_order_bounds", IDENTITY_TOLERANCE),
        Tally::new("push_through_inverse", IDENTITY_TOLERANCE),
        Tally::new("push_through_gain", IDENTITY_TOLERANCE),
    ];
    for trial in 0..trials {
        let mut rng = rng::stream_rng(seed, Purpose::Battery, trial as u64, 0);
        let inst = random_instance(&mut rng);
        tallies[0].push(Ok(l2_decomposition(&inst.forecast)));
        tallies[1].push(transform_covariance_consistency(&inst));
        tallies[2].push(gain_identity(&inst));
        tallies[3].push(mean_update_information_form(&inst));
        tallies[4].push(deviation_and_transform_ones(&inst));
        tallies[5].push(transform_representation(&inst));

        let m = rng.random_range(1..=8usize);
        let n = rng.random_range(m + 1..=m + 8);
        let full = Ensemble::from_columns(gaussian_matrix(m, n, &mut rng)).expect("finite ensemble");
        let gamma = rng.random_range(0.2..2.0);
        tallies[6].push(eigenvalue_map(&full, inst.alpha, gamma));

        let k = rng.random_range(1..=20usize);
        let a = spd_matrix(k, &mut rng) - DMatrix::identity(k, k) * 0.5;
        tallies[7].push(inverse_shift_identity(&a));
        tallies[8].push(shifted_inverse_order_bounds(&a));

        let d = inst.h.nrows();
        let v = gaussian_matrix(d, inst.forecast.size(), &mut rng);
        tallies[9].push(push_through_inverse(&v, &inst.gamma));
        tallies[10].push(push_through_gain(&v, &inst.gamma));
    }
    IdentityReport { seed, results: tallies.into_iter().map(Tally::finish).collect() }
}
