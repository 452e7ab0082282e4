//! CSV output.
//!
//! Floating-point values are written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite `f64` through text. `NaN`
//! and infinities are written as `NaN`, `inf` and `-inf`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use etkf_core::bounds::{asymptotic_bound, finite_time_bound, wellposed_bound, DerivedConstants};
use etkf_core::twin::{EnsembleInit, ErrorTrace, TwinConfig};
use etkf_core::DVector;

use crate::montecarlo::MonteCarloSummary;
use crate::resolve::ResolvedConstants;
use crate::LabError;

pub const TRACE_HEADER: &str =
    "step,time,e_sq,spread_sq,ensemble_err_sq,lambda_min_forecast,lambda_min_analysis,bound_wellposed,bound_thm37,in_ball";
pub const SUMMARY_EXTRA_HEADER: &str = "e_sq_sem,ensemble_err_sq_sem,replicates";
pub const BOUNDS_HEADER: &str = "j,bound_wellposed,bound_thm37,asymptote";

pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64, LabError> {
    s.trim().parse().map_err(|_| LabError::Parse(format!("not a number: {s:?}")))
}

/// Bound values per step `j = 0..=J`; `NaN` where a bound is unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundColumns {
    pub wellposed: Vec<f64>,
    pub finite_time: Vec<f64>,
    pub asymptote: f64,
}

impl BoundColumns {
    pub fn unavailable(cycles: usize) -> Self {
        BoundColumns { wellposed: vec![f64::NAN; cycles + 1], finite_time: vec![f64::NAN; cycles + 1], asymptote: f64::NAN }
    }

    /// Bounds started from `e0_ens_sq = ||E_0||^2` and `e0_sq = |e_0|^2`.
    pub fn compute(constants: &ResolvedConstants, cycles: usize, e0_ens_sq: f64, e0_sq: f64) -> Self {
        let mut out = Self::unavailable(cycles);
        if let Ok(p) = constants.wellposed_params() {
            out.wellposed = (0..=cycles).map(|j| wellposed_bound(j, e0_ens_sq, &p)).collect();
        }
        if let Ok(p) = constants.inflation_params() {
            if let Ok(c) = DerivedConstants::compute(&p) {
                out.finite_time = (0..=cycles).map(|j| finite_time_bound(j, e0_sq, &p, &c)).collect();
                out.asymptote = asymptotic_bound(&p, &c).unwrap_or(f64::NAN);
            }
        }
        out
    }
}

/// Expected `(|e_0|^2, ||E_0||^2)` of the initial ensemble, without sampling.
///
/// Gaussian members `u_0 + offset + s z_n` give `|offset|^2 + m s^2 / N`
/// and `|offset|^2 + m s^2`; explicit members are evaluated directly.
pub fn expected_initial_errors(twin: &TwinConfig) -> Result<(f64, f64), LabError> {
    let m = twin.dim() as f64;
    let n = twin.n_members as f64;
    match &twin.ensemble {
        EnsembleInit::Gaussian { mean_offset, spread, .. } => {
            let off = mean_offset.as_ref().map_or(0.0, DVector::norm_squared);
            let s2 = spread * spread;
            Ok((off + m * s2 / n, off + m * s2))
        }
        EnsembleInit::Explicit(e) => {
            let u0 = etkf_core::twin::initial_truth(twin)?;
            let err = e.offset_by(&u0)?;
            Ok(((e.mean() - &u0).norm_squared(), err.l2_norm_sq()))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, LabError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// One row per assimilation step `1..=J`.
pub fn write_trace(trace: &ErrorTrace, bounds: &BoundColumns, path: impl AsRef<Path>) -> Result<(), LabError> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            format_f64(r.time),
            format_f64(r.e_sq),
            format_f64(r.spread_sq),
            format_f64(r.ensemble_err_sq),
            format_f64(r.lambda_min_forecast),
            format_f64(r.lambda_min_analysis),
            format_f64(bounds.wellposed.get(r.step).copied().unwrap_or(f64::NAN)),
            format_f64(bounds.finite_time.get(r.step).copied().unwrap_or(f64::NAN)),
            r.in_ball
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Trace columns followed by standard errors and the replicate count.
pub fn write_summary(summary: &MonteCarloSummary, bounds: &BoundColumns, path: impl AsRef<Path>) -> Result<(), LabError> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{TRACE_HEADER},{SUMMARY_EXTRA_HEADER}")?;
    for s in summary.cycles() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            format_f64(s.time),
            format_f64(s.mean_e_sq),
            format_f64(s.mean_spread_sq),
            format_f64(s.mean_ensemble_err_sq),
            format_f64(s.mean_lambda_min_forecast),
            format_f64(s.mean_lambda_min_analysis),
            format_f64(bounds.wellposed.get(s.step).copied().unwrap_or(f64::NAN)),
            format_f64(bounds.finite_time.get(s.step).copied().unwrap_or(f64::NAN)),
            s.all_in_ball,
            format_f64(s.sem_e_sq),
            format_f64(s.sem_ensemble_err_sq),
            summary.replicates
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `step, y_1..y_d` for steps `1..=J`.
pub fn write_observations(observations: &[DVector<f64>], path: impl AsRef<Path>) -> Result<(), LabError> {
    let mut w = create(path.as_ref())?;
    let d = observations.first().map_or(0, |y| y.len());
    let header: Vec<String> = std::iter::once("step".to_string()).chain((1..=d).map(|i| format!("y_{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for (j, y) in observations.iter().enumerate() {
        let cells: Vec<String> = y.iter().map(|&v| format_f64(v)).collect();
        writeln!(w, "{},{}", j + 1, cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `j, bound_wellposed, bound_thm37, asymptote` for `j = 0..=J`.
pub fn write_bounds(bounds: &BoundColumns, path: impl AsRef<Path>) -> Result<(), LabError> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "{BOUNDS_HEADER}")?;
    for (j, (wp, t)) in bounds.wellposed.iter().zip(&bounds.finite_time).enumerate() {
        writeln!(w, "{j},{},{},{}", format_f64(*wp), format_f64(*t), format_f64(bounds.asymptote))?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub e_sq: f64,
    pub spread_sq: f64,
    pub ensemble_err_sq: f64,
    pub lambda_min_forecast: f64,
    pub lambda_min_analysis: f64,
    pub bound_wellposed: f64,
    pub bound_finite_time: f64,
    pub in_ball: bool,
}

/// Reads a trace (or the leading columns of a summary) written by this module.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>, LabError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if !header.starts_with(TRACE_HEADER) {
        return Err(LabError::Parse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 10 {
            return Err(LabError::Parse(format!("short row {line:?}")));
        }
        rows.push(TraceRow {
            step: f[0].parse().map_err(|_| LabError::Parse(format!("bad step {:?}", f[0])))?,
            time: parse_f64(f[1])?,
            e_sq: parse_f64(f[2])?,
            spread_sq: parse_f64(f[3])?,
            ensemble_err_sq: parse_f64(f[4])?,
            lambda_min_forecast: parse_f64(f[5])?,
            lambda_min_analysis: parse_f64(f[6])?,
            bound_wellposed: parse_f64(f[7])?,
            bound_finite_time: parse_f64(f[8])?,
            in_ball: f[9].parse().map_err(|_| LabError::Parse(format!("bad flag {:?}", f[9])))?,
        });
    }
    Ok(rows)
}
