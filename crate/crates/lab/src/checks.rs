//! Monte Carlo checks of the error bounds.
//!
//! Bounds are statements about exact expectations; the checks compare them
//! with replicate means and flag a violation only when the mean exceeds the
//! bound by more than `z` standard errors.

use etkf_core::bounds::{
    asymptotic_bound, finite_time_bound, wellposed_bound, BoundParams, DerivedConstants, LambdaFloor,
};

use crate::montecarlo::MonteCarloSummary;
use crate::resolve::ResolvedConstants;
use crate::LabError;

/// Default number of standard errors allowed above a bound.
pub const DEFAULT_Z: f64 = 3.0;
/// Slack on the eigenvalue floor.
pub const FLOOR_TOLERANCE: f64 = 1e-8;
/// Steps averaged for the long-run comparison.
pub const TAIL_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub step: usize,
    pub mean: f64,
    pub half_width: f64,
    pub bound: f64,
    /// `bound - mean`.
    pub margin: f64,
    pub violated: bool,
}

impl BoundRow {
    fn new(step: usize, mean: f64, half_width: f64, bound: f64) -> Self {
        BoundRow { step, mean, half_width, bound, margin: bound - mean, violated: !(mean <= bound + half_width) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellposednessReport {
    pub params: BoundParams,
    pub rows: Vec<BoundRow>,
}

impl WellposednessReport {
    pub fn violations(&self) -> impl Iterator<Item = &BoundRow> {
        self.rows.iter().filter(|r| r.violated)
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }
}

/// Compares the mean `||E_j||^2` with the well-posedness bound started from
/// the sample mean of `||E_0||^2`.
pub fn check_wellposedness(
    constants: &ResolvedConstants,
    summary: &MonteCarloSummary,
    z: f64,
) -> Result<WellposednessReport, LabError> {
    let params = constants.wellposed_params()?;
    let e0 = summary.step(0).mean_ensemble_err_sq;
    let rows = summary
        .steps
        .iter()
        .map(|s| BoundRow::new(s.step, s.mean_ensemble_err_sq, z * s.sem_ensemble_err_sq, wellposed_bound(s.step, e0, &params)))
        .collect();
    Ok(WellposednessReport { params, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorViolation {
    pub step: usize,
    pub eigenvalue: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FloorCheck {
    /// `e^{-ah} alpha^2 <= 1`: there is no floor to check.
    NoFloor,
    Checked { floor: f64, violations: Vec<FloorViolation> },
}

impl FloorCheck {
    pub fn passed(&self) -> bool {
        match self {
            FloorCheck::NoFloor => true,
            FloorCheck::Checked { violations, .. } => violations.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticCheck {
    pub window: usize,
    pub tail_mean: f64,
    pub half_width: f64,
    pub bound: f64,
    /// Same bound with `Theta` built from the run's `alpha` instead of `alpha_0`.
    pub bound_run_alpha: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformBoundReport {
    pub params: BoundParams,
    pub constants: DerivedConstants,
    /// The run's `alpha` is below `alpha_0`, so the uniform bound is not guaranteed.
    pub below_threshold: bool,
    pub floor: FloorCheck,
    pub finite_time: Vec<BoundRow>,
    /// `None` when `theta >= 1`.
    pub asymptotic: Option<AsymptoticCheck>,
    pub ball_exits: usize,
}

impl UniformBoundReport {
    pub fn finite_time_passed(&self) -> bool {
        self.finite_time.iter().all(|r| !r.violated)
    }

    pub fn asymptotic_passed(&self) -> bool {
        self.asymptotic.as_ref().is_some_and(|a| a.passed)
    }

    pub fn passed(&self) -> bool {
        self.floor.passed() && self.finite_time_passed() && self.asymptotic_passed()
    }
}

/// Checks the eigenvalue floor, the finite-time bound and the long-run bound
/// on the mean `|e_j|^2`.
pub fn check_uniform_bound(
    constants: &ResolvedConstants,
    summary: &MonteCarloSummary,
    z: f64,
) -> Result<UniformBoundReport, LabError> {
    if constants.n_members <= constants.m {
        return Err(LabError::ConfigMismatch(format!(
            "the inflation bound needs a full-rank covariance: N = {} <= m = {}",
            constants.n_members, constants.m
        )));
    }
    let params = constants.inflation_params()?;
    let c = DerivedConstants::compute(&params)?;
    let floor = match c.lambda_star {
        LambdaFloor::NoFloor => FloorCheck::NoFloor,
        LambdaFloor::Floor(floor) => FloorCheck::Checked {
            floor,
            violations: summary
                .cycles()
                .iter()
                .filter(|s| !(s.min_lambda_min_forecast >= floor - FLOOR_TOLERANCE))
                .map(|s| FloorViolation { step: s.step, eigenvalue: s.min_lambda_min_forecast, floor })
                .collect(),
        },
    };
    let e0 = summary.step(0).mean_e_sq;
    let finite_time = summary
        .steps
        .iter()
        .map(|s| BoundRow::new(s.step, s.mean_e_sq, z * s.sem_e_sq, finite_time_bound(s.step, e0, &params, &c)))
        .collect();
    let asymptotic = asymptotic_bound(&params, &c).ok().map(|bound| {
        let (tail_mean, sem) = summary.tail_mean_e_sq(TAIL_WINDOW);
        let run = c.with_run_alpha_cap(&params);
        AsymptoticCheck {
            window: TAIL_WINDOW.min(summary.steps.len() - 1),
            tail_mean,
            half_width: z * sem,
            bound,
            bound_run_alpha: asymptotic_bound(&params, &run).unwrap_or(f64::NAN),
            passed: tail_mean <= bound + z * sem,
        }
    });
    Ok(UniformBoundReport {
        params,
        below_threshold: params.alpha < c.alpha0,
        constants: c,
        floor,
        finite_time,
        asymptotic,
        ball_exits: summary.ball_exits(),
    })
}
