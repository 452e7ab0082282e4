//! Single-replicate twin experiment: a truth trajectory, synthetic
//! observations and the filter run against them.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::analysis::{analysis_step, AnalysisForm, InflationFactor};
use crate::dynamics::{flow, predict_ensemble, FlowConfig, ModelSystem};
use crate::ensemble::{Ensemble, StateVector};
use crate::linalg;
use crate::observation::{observe, NoiseStream, ObservationModel};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TruthInit {
    pub state: StateVector,
    /// Standard deviation of the Gaussian kick added before spin-up.
    pub perturbation: f64,
    pub spin_up_steps: usize,
    /// Integrator step for the spin-up; the cycle flow is used when absent.
    pub spin_up_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleInit {
    /// Members `u_0 + offset + spread z_n` with `z_n ~ N(0, I)`.
    Gaussian {
        mean_offset: Option<StateVector>,
        spread: f64,
        /// Defaults to the run seed.
        seed: Option<u64>,
        /// Rescale the deviations so the sample covariance is exactly `spread^2 I` (needs `N > m`).
        exact_covariance: bool,
    },
    Explicit(Ensemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinConfig {
    pub model: ModelSystem,
    pub flow: FlowConfig,
    pub n_members: usize,
    pub alpha: InflationFactor,
    pub observation: ObservationModel,
    pub cycles: usize,
    pub run_seed: u64,
    pub truth: TruthInit,
    pub ensemble: EnsembleInit,
    pub form: AnalysisForm,
    /// Radius of the ball that members are checked against.
    pub rho: Option<f64>,
}

impl TwinConfig {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if self.n_members < 2 {
            return Err(Error::Size(self.n_members));
        }
        if self.observation.state_dim() != m {
            return Err(Error::DimensionMismatch { expected: m, found: self.observation.state_dim() });
        }
        if self.truth.state.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: self.truth.state.len() });
        }
        if !(self.truth.perturbation >= 0.0) || !self.truth.perturbation.is_finite() {
            return Err(Error::InvalidParameter("truth perturbation must be finite and non-negative"));
        }
        match &self.ensemble {
            EnsembleInit::Gaussian { mean_offset, spread, exact_covariance, .. } => {
                if let Some(off) = mean_offset {
                    if off.len() != m {
                        return Err(Error::DimensionMismatch { expected: m, found: off.len() });
                    }
                }
                if !(*spread >= 0.0) || !spread.is_finite() {
                    return Err(Error::InvalidParameter("ensemble spread must be finite and non-negative"));
                }
                if *exact_covariance && (self.n_members <= m || *spread == 0.0) {
                    return Err(Error::InvalidParameter("exact covariance needs N > m and positive spread"));
                }
            }
            EnsembleInit::Explicit(e) => {
                if e.dim() != m {
                    return Err(Error::DimensionMismatch { expected: m, found: e.dim() });
                }
                if e.size() != self.n_members {
                    return Err(Error::DimensionMismatch { expected: self.n_members, found: e.size() });
                }
            }
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter("rho must be positive"));
            }
        }
        Ok(())
    }
}

/// Truth at time 0: perturbed and spun up. Shared by every replicate of a run.
pub fn initial_truth(cfg: &TwinConfig) -> Result<StateVector> {
    let mut rng = rng::stream_rng(cfg.run_seed, Purpose::TruthPerturbation, 0, 0);
    let mut u = cfg.truth.state.clone();
    if cfg.truth.perturbation > 0.0 {
        for x in u.iter_mut() {
            *x += cfg.truth.perturbation * rng::standard_normal(&mut rng);
        }
    }
    let spin = match cfg.truth.spin_up_dt {
        Some(dt) => FlowConfig::with_substeps(dt, 1)?,
        None => cfg.flow,
    };
    for _ in 0..cfg.truth.spin_up_steps {
        u = flow(&cfg.model, &spin, &u)?;
    }
    Ok(u)
}

pub fn initial_ensemble(cfg: &TwinConfig, truth: &StateVector, replicate_id: u64) -> Result<Ensemble> {
    match &cfg.ensemble {
        EnsembleInit::Explicit(e) => Ok(e.clone()),
        EnsembleInit::Gaussian { mean_offset, spread, seed, exact_covariance } => {
            let m = cfg.dim();
            let n = cfg.n_members;
            let mut rng = rng::stream_rng(seed.unwrap_or(cfg.run_seed), Purpose::InitialEnsemble, replicate_id, 0);
            let z = DMatrix::from_fn(m, n, |_, _| rng::standard_normal(&mut rng));
            let mut center = truth.clone();
            if let Some(off) = mean_offset {
                center += off;
            }
            if !*exact_covariance {
                let mut members = z * *spread;
                for mut col in members.column_iter_mut() {
                    col += &center;
                }
                return Ensemble::from_columns(members);
            }
            let sample = Ensemble::from_columns(z)?;
            let zbar = sample.mean();
            let dev = sample.deviations();
            let whiten = linalg::inverse_sqrt_spd(sample.covariance().matrix())?;
            let white = Ensemble::from_columns(whiten * dev.as_matrix())?;
            let mean = center + zbar * *spread;
            Ensemble::from_mean_and_deviations(&mean, &white.scaled(*spread)?)
        }
    }
}

/// Diagnostics after the analysis of one cycle (step 0 is the initial ensemble).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// `|mean - u|^2`.
    pub e_sq: f64,
    /// `||dV||^2`.
    pub spread_sq: f64,
    /// `||V - u 1||^2`.
    pub ensemble_err_sq: f64,
    /// Minimum eigenvalue of the un-inflated forecast covariance (NaN at step 0, 0 when `N - 1 < m`).
    pub lambda_min_forecast: f64,
    /// Minimum eigenvalue of the analysis covariance (0 when `N - 1 < m`).
    pub lambda_min_analysis: f64,
    /// Every forecast and analysis member lies in the ball of radius `rho`.
    pub in_ball: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFailure {
    pub step: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    pub replicate_id: u64,
    pub initial: StepRecord,
    /// Cycles `1..=J` that completed.
    pub steps: Vec<StepRecord>,
    pub failure: Option<TraceFailure>,
}

impl ErrorTrace {
    /// Initial record followed by the cycle records.
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        core::iter::once(&self.initial).chain(self.steps.iter())
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn min_eig_or_zero(e: &Ensemble) -> Result<f64> {
    if e.size() <= e.dim() {
        return Ok(0.0);
    }
    e.covariance().min_eigenvalue()
}

fn within(e: &Ensemble, rho: Option<f64>) -> bool {
    rho.map_or(true, |r| e.max_member_norm() <= r)
}

fn record(
    step: usize,
    time: f64,
    ensemble: &Ensemble,
    truth: &StateVector,
    lambda_min_forecast: f64,
    in_ball: bool,
) -> Result<StepRecord> {
    let e = ensemble.mean() - truth;
    Ok(StepRecord {
        step,
        time,
        e_sq: e.norm_squared(),
        spread_sq: ensemble.deviations().l2_norm_sq(),
        ensemble_err_sq: ensemble.offset_by(truth)?.l2_norm_sq(),
        lambda_min_forecast,
        lambda_min_analysis: min_eig_or_zero(ensemble)?,
        in_ball,
    })
}

/// Runs the filter for `cfg.cycles` cycles on replicate `replicate_id`.
///
/// Configuration errors are returned directly; numerical failures during the
/// run end the trace early and are reported in [`ErrorTrace::failure`].
pub fn run_filter(cfg: &TwinConfig, replicate_id: u64) -> Result<ErrorTrace> {
    cfg.validate()?;
    let mut truth = initial_truth(cfg)?;
    let mut ensemble = initial_ensemble(cfg, &truth, replicate_id)?;
    let initial = record(0, 0.0, &ensemble, &truth, f64::NAN, within(&ensemble, cfg.rho))?;
    let stream = NoiseStream::new(cfg.run_seed, replicate_id);
    let mut steps = Vec::with_capacity(cfg.cycles);
    let mut failure = None;
    for j in 1..=cfg.cycles {
        let cycle = || -> Result<(StepRecord, StateVector, Ensemble)> {
            let truth_next = flow(&cfg.model, &cfg.flow, &truth)?;
            let forecast = predict_ensemble(&cfg.model, &cfg.flow, &ensemble)?;
            let y = observe(&truth_next, &cfg.observation, &stream, j)?;
            let out = analysis_step(cfg.form, &forecast, &y.value, &cfg.observation, cfg.alpha)?;
            let lambda_f = match &out.diagnostics {
                Some(d) if forecast.size() > forecast.dim() => d.forecast_min_eigenvalue,
                _ => min_eig_or_zero(&forecast)?,
            };
            let in_ball = within(&forecast, cfg.rho) && within(&out.analysis, cfg.rho);
            let rec = record(j, j as f64 * cfg.flow.h(), &out.analysis, &truth_next, lambda_f, in_ball)?;
            Ok((rec, truth_next, out.analysis))
        };
        match cycle() {
            Ok((rec, t, e)) => {
                steps.push(rec);
                truth = t;
                ensemble = e;
            }
            Err(error) => {
                failure = Some(TraceFailure { step: j, error });
                break;
            }
        }
    }
    Ok(ErrorTrace { replicate_id, initial, steps, failure })
}

/// Truth states `u_0, ..., u_J` of a run.
pub fn truth_trajectory(cfg: &TwinConfig) -> Result<Vec<StateVector>> {
    let u0 = initial_truth(cfg)?;
    let rest = crate::dynamics::trajectory(&cfg.model, &cfg.flow, &u0, cfg.cycles)?;
    Ok(core::iter::once(u0).chain(rest).collect())
}

/// Observations `y_1, ..., y_J` seen by replicate `replicate_id`.
pub fn observation_sequence(cfg: &TwinConfig, replicate_id: u64) -> Result<Vec<StateVector>> {
    let stream = NoiseStream::new(cfg.run_seed, replicate_id);
    truth_trajectory(cfg)?
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, u)| observe(u, &cfg.observation, &stream, j).map(|r| r.value))
        .collect()
}
