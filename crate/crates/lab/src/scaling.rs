//! Noise-scale dependence of the long-run bound.

use etkf_core::bounds::{asymptotic_bound, gamma_scaling_exponent, BoundParams, DerivedConstants};

use crate::LabError;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// `(gamma, asymptotic bound)` pairs.
    pub rows: Vec<(f64, f64)>,
    /// Least-squares slope of `ln bound` against `ln gamma`.
    pub slope: f64,
}

pub fn scaling_report(template: &BoundParams, gammas: &[f64]) -> Result<ScalingReport, LabError> {
    let rows = gammas
        .iter()
        .map(|&g| {
            let p = template.with_gamma(g);
            let c = DerivedConstants::compute(&p)?;
            Ok((g, asymptotic_bound(&p, &c)?))
        })
        .collect::<Result<Vec<_>, etkf_core::Error>>()?;
    let slope = gamma_scaling_exponent(template, gammas)?;
    Ok(ScalingReport { rows, slope })
}

/// Parses `g1,g2,...`.
pub fn parse_gammas(text: &str) -> Result<Vec<f64>, LabError> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| LabError::Parse(format!("bad gamma {s:?}"))))
        .collect()
}
