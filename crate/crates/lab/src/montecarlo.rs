//! Parallel Monte Carlo replication of twin experiments.
//!
//! Replicates run on a rayon pool (capped by `ETKF_LAB_THREADS`) and are
//! aggregated in replicate-id order with compensated summation, so the
//! summary does not depend on scheduling.

use etkf_core::twin::{run_filter, ErrorTrace, TwinConfig};
use rayon::prelude::*;

use crate::LabError;

pub const THREADS_ENV: &str = "ETKF_LAB_THREADS";

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_and_sem(values: impl IntoIterator<Item = f64> + Clone) -> (f64, f64) {
    let mut n = 0usize;
    let mut s = CompensatedSum::default();
    for v in values.clone() {
        s.add(v);
        n += 1;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = s.value() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut q = CompensatedSum::default();
    for v in values {
        q.add((v - mean) * (v - mean));
    }
    let var = q.value() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub time: f64,
    pub mean_e_sq: f64,
    pub sem_e_sq: f64,
    pub mean_spread_sq: f64,
    pub mean_ensemble_err_sq: f64,
    pub sem_ensemble_err_sq: f64,
    pub mean_lambda_min_forecast: f64,
    /// Smallest forecast eigenvalue over all replicates.
    pub min_lambda_min_forecast: f64,
    pub mean_lambda_min_analysis: f64,
    /// Every replicate kept its members in the ball at this step.
    pub all_in_ball: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub replicates: usize,
    /// Step 0 (initial ensemble) followed by steps `1..=J`.
    pub steps: Vec<StepSummary>,
    /// `|e_j|^2` per replicate (outer index) and step (inner index, from 0).
    pub replicate_e_sq: Vec<Vec<f64>>,
}

impl MonteCarloSummary {
    pub fn step(&self, j: usize) -> &StepSummary {
        &self.steps[j]
    }

    /// Steps `1..=J`.
    pub fn cycles(&self) -> &[StepSummary] {
        &self.steps[1..]
    }

    /// Mean and standard error, across replicates, of the per-replicate time
    /// average of `|e_j|^2` over the last `window` steps.
    pub fn tail_mean_e_sq(&self, window: usize) -> (f64, f64) {
        let total = self.steps.len();
        let start = total.saturating_sub(window).max(1);
        let averages: Vec<f64> = self
            .replicate_e_sq
            .iter()
            .map(|row| {
                let mut s = CompensatedSum::default();
                row[start..total].iter().for_each(|&x| s.add(x));
                s.value() / (total - start) as f64
            })
            .collect();
        mean_and_sem(averages.iter().copied())
    }

    /// Number of steps at which some replicate left the ball.
    pub fn ball_exits(&self) -> usize {
        self.steps.iter().filter(|s| !s.all_in_ball).count()
    }
}

/// Thread count from `ETKF_LAB_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

fn run_replicates(cfg: &TwinConfig, ids: &[u64]) -> Result<Vec<ErrorTrace>, LabError> {
    let job = || ids.par_iter().map(|&id| run_filter(cfg, id)).collect::<Result<Vec<_>, _>>();
    let traces = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?
            .install(job)?,
        None => job()?,
    };
    Ok(traces)
}

/// Runs replicates `0..replicates` and aggregates them.
pub fn run_monte_carlo(cfg: &TwinConfig, replicates: usize) -> Result<MonteCarloSummary, LabError> {
    let ids: Vec<u64> = (0..replicates as u64).collect();
    run_monte_carlo_ids(cfg, &ids)
}

/// Runs the given replicate ids (in any order) and aggregates them.
pub fn run_monte_carlo_ids(cfg: &TwinConfig, ids: &[u64]) -> Result<MonteCarloSummary, LabError> {
    if ids.is_empty() {
        return Err(LabError::Config("replicates must be at least 1".into()));
    }
    aggregate(run_replicates(cfg, ids)?)
}

/// Aggregates complete traces in replicate-id order.
pub fn aggregate(mut traces: Vec<ErrorTrace>) -> Result<MonteCarloSummary, LabError> {
    let failed: Vec<&ErrorTrace> = traces.iter().filter(|t| !t.completed()).collect();
    if let Some(first) = failed.first() {
        let f = first.failure.as_ref().expect("failed trace has a failure");
        return Err(LabError::ReplicateFailures {
            count: failed.len(),
            replicate: first.replicate_id,
            step: f.step,
            error: f.error.clone(),
        });
    }
    if traces.is_empty() {
        return Err(LabError::Config("replicates must be at least 1".into()));
    }
    traces.sort_by_key(|t| t.replicate_id);
    let len = traces[0].len() + 1;
    if traces.iter().any(|t| t.len() + 1 != len) {
        return Err(LabError::Config("replicate traces differ in length".into()));
    }
    let rows: Vec<Vec<_>> = traces.iter().map(|t| t.records().copied().collect()).collect();
    let mut steps = Vec::with_capacity(len);
    for j in 0..len {
        let col = |f: fn(&etkf_core::twin::StepRecord) -> f64| rows.iter().map(move |r| f(&r[j]));
        let (mean_e_sq, sem_e_sq) = mean_and_sem(col(|r| r.e_sq));
        let (mean_ensemble_err_sq, sem_ensemble_err_sq) = mean_and_sem(col(|r| r.ensemble_err_sq));
        steps.push(StepSummary {
            step: j,
            time: rows[0][j].time,
            mean_e_sq,
            sem_e_sq,
            mean_spread_sq: mean_and_sem(col(|r| r.spread_sq)).0,
            mean_ensemble_err_sq,
            sem_ensemble_err_sq,
            mean_lambda_min_forecast: mean_and_sem(col(|r| r.lambda_min_forecast)).0,
            min_lambda_min_forecast: col(|r| r.lambda_min_forecast).fold(f64::INFINITY, f64::min),
            mean_lambda_min_analysis: mean_and_sem(col(|r| r.lambda_min_analysis)).0,
            all_in_ball: rows.iter().all(|r| r[j].in_ball),
        });
    }
    if len > 0 {
        steps[0].min_lambda_min_forecast = f64::NAN;
    }
    let replicate_e_sq = rows.iter().map(|r| r.iter().map(|x| x.e_sq).collect()).collect();
    Ok(MonteCarloSummary { replicates: traces.len(), steps, replicate_e_sq })
}
