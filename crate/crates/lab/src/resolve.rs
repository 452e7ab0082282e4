//! Resolution of the bound constants `(rho, beta, epsilon, lambda0, alpha)`
//! for a run, with a record of where each value came from.

use std::fmt;

use etkf_core::bounds::{alpha_zero, BoundParams};
use etkf_core::dynamics::{self, estimate_beta_lipschitz, estimate_beta_one_sided, FlowConfig};
use etkf_core::twin::{self, EnsembleInit};

use crate::config::{AlphaSpec, RunConfig};
use crate::LabError;

/// Samples used by the sampled growth-constant estimators.
pub const BETA_SAMPLES: usize = 20_000;
/// Multiplier applied to the largest truth norm when `rho` is estimated.
pub const RHO_MARGIN: f64 = 1.1;
/// Minimum time horizon of the truth run used to estimate `rho`.
pub const RHO_HORIZON: f64 = 20.0;
/// Coarsest integrator step used for that run.
pub const RHO_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Given in the configuration.
    Configured,
    /// Closed form for the model (linear dynamics).
    Exact,
    /// Computed from other resolved values.
    Derived,
    /// Sampled or simulated estimate.
    Estimated,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Configured => "configured",
            Source::Exact => "exact",
            Source::Derived => "derived",
            Source::Estimated => "estimated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sourced {
    pub value: f64,
    pub source: Source,
}

impl Sourced {
    fn new(value: f64, source: Source) -> Self {
        Sourced { value, source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConstants {
    pub m: usize,
    pub n_members: usize,
    pub h: f64,
    /// Noise scale when `H = I` and `Gamma = gamma^2 I`.
    pub gamma: Option<f64>,
    pub rho: Sourced,
    pub beta: Sourced,
    pub beta_lipschitz: Sourced,
    pub epsilon: Sourced,
    pub lambda0: Option<Sourced>,
    pub alpha: Sourced,
    pub alpha0: Option<f64>,
}

impl ResolvedConstants {
    pub fn resolve(cfg: &RunConfig) -> Result<Self, LabError> {
        let twin = cfg.twin_with_alpha(1.0)?;
        let m = twin.dim();
        let gamma = if twin.observation.operator.is_identity() { twin.observation.noise.gamma() } else { None };

        let rho = match cfg.rho {
            Some(r) => Sourced::new(r, Source::Configured),
            None => {
                let u0 = twin::initial_truth(&twin)?;
                let dt = twin.flow.dt().max(RHO_DT);
                let horizon = (twin.cycles as f64 * twin.flow.h()).max(RHO_HORIZON);
                let coarse = FlowConfig::with_substeps(dt, 1)?;
                let steps = (horizon / dt).ceil() as usize;
                let (radius, _) = dynamics::trajectory_radius(&twin.model, &coarse, &u0, steps)?;
                Sourced::new(RHO_MARGIN * radius.max(f64::MIN_POSITIVE), Source::Estimated)
            }
        };
        let exact = dynamics::linear_constants(&twin.model);
        let beta = match (cfg.beta, exact) {
            (Some(b), _) => Sourced::new(b, Source::Configured),
            (None, Some((one, _))) => Sourced::new(one, Source::Exact),
            (None, None) => Sourced::new(
                estimate_beta_one_sided(&twin.model, rho.value, BETA_SAMPLES, cfg.run_seed),
                Source::Estimated,
            ),
        };
        let beta_lipschitz = match (cfg.beta_lipschitz, exact) {
            (Some(b), _) => Sourced::new(b, Source::Configured),
            (None, Some((_, lip))) => Sourced::new(lip, Source::Exact),
            (None, None) => Sourced::new(
                estimate_beta_lipschitz(&twin.model, rho.value, BETA_SAMPLES, cfg.run_seed),
                Source::Estimated,
            ),
        };
        let epsilon = match cfg.epsilon {
            Some(e) => Sourced::new(e, Source::Configured),
            None => Sourced::new(BoundParams::default_epsilon(beta_lipschitz.value), Source::Derived),
        };
        let lambda0 = match (cfg.lambda0, &twin.ensemble) {
            (Some(l), _) => Some(Sourced::new(l, Source::Configured)),
            (None, EnsembleInit::Gaussian { spread, exact_covariance: true, .. }) => {
                Some(Sourced::new(spread * spread, Source::Derived))
            }
            (None, _) if twin.n_members > m => {
                let u0 = twin::initial_truth(&twin)?;
                let e0 = twin::initial_ensemble(&twin, &u0, 0)?;
                Some(Sourced::new(e0.covariance().min_eigenvalue()?, Source::Estimated))
            }
            _ => None,
        };

        let mut out = ResolvedConstants {
            m,
            n_members: twin.n_members,
            h: twin.flow.h(),
            gamma,
            rho,
            beta,
            beta_lipschitz,
            epsilon,
            lambda0,
            alpha: Sourced::new(1.0, Source::Configured),
            alpha0: None,
        };
        out.alpha0 = out.inflation_params_with_alpha(1.0).ok().map(|p| alpha_zero(&p));
        out.alpha = match cfg.alpha {
            AlphaSpec::Value(a) => Sourced::new(a, Source::Configured),
            AlphaSpec::Relative(r) => {
                let a0 = out.alpha0.ok_or_else(|| {
                    LabError::ConfigMismatch(
                        "alpha relative to alpha_0 needs a fully observed run with lambda0 and epsilon > 0".into(),
                    )
                })?;
                if !a0.is_finite() {
                    return Err(LabError::ConfigMismatch(format!(
                        "alpha_0 = {a0} for h = {}; give alpha as a number or shorten h",
                        out.h
                    )));
                }
                Sourced::new(r.times_alpha0 * a0, Source::Derived)
            }
        };
        Ok(out)
    }

    fn gamma_or_mismatch(&self) -> Result<f64, LabError> {
        self.gamma.ok_or_else(|| {
            LabError::ConfigMismatch("bounds need H = I and Gamma = gamma^2 I".into())
        })
    }

    /// Parameters for the well-posedness bound (one-sided `beta`).
    pub fn wellposed_params(&self) -> Result<BoundParams, LabError> {
        Ok(BoundParams {
            beta: self.beta.value,
            epsilon: self.epsilon.value,
            rho: self.rho.value,
            h: self.h,
            gamma: self.gamma_or_mismatch()?,
            n_members: self.n_members,
            m: self.m,
            alpha: self.alpha.value,
            lambda0: self.lambda0.map_or(1.0, |l| l.value),
        })
    }

    /// Inflation-bound parameters for an arbitrary `alpha`.
    pub fn inflation_params_with_alpha(&self, alpha: f64) -> Result<BoundParams, LabError> {
        let lambda0 = self.lambda0.ok_or_else(|| {
            LabError::ConfigMismatch("inflation bounds need a full-rank initial covariance (N > m) or lambda0".into())
        })?;
        let p = BoundParams {
            beta: self.beta_lipschitz.value,
            epsilon: self.epsilon.value,
            rho: self.rho.value,
            h: self.h,
            gamma: self.gamma_or_mismatch()?,
            n_members: self.n_members,
            m: self.m,
            alpha,
            lambda0: lambda0.value,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters for the inflation bounds (Lipschitz `beta`).
    pub fn inflation_params(&self) -> Result<BoundParams, LabError> {
        self.inflation_params_with_alpha(self.alpha.value)
    }

    /// One line per constant, `name = value (source)`.
    pub fn provenance(&self) -> Vec<String> {
        let mut lines = vec![
            format!("rho = {} ({})", self.rho.value, self.rho.source),
            format!("beta = {} ({})", self.beta.value, self.beta.source),
            format!("beta_lipschitz = {} ({})", self.beta_lipschitz.value, self.beta_lipschitz.source),
            format!("epsilon = {} ({})", self.epsilon.value, self.epsilon.source),
        ];
        match self.lambda0 {
            Some(l) => lines.push(format!("lambda0 = {} ({})", l.value, l.source)),
            None => lines.push("lambda0 = unavailable".into()),
        }
        if let Some(a0) = self.alpha0 {
            lines.push(format!("alpha0 = {a0} (derived)"));
        }
        lines.push(format!("alpha = {} ({})", self.alpha.value, self.alpha.source));
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> RunConfig {
        let text = format!(
            r#"{{
            "model": {{"kind": "scaled_identity", "a": -1.0, "dim": 3}},
            "h": 0.1, "n_members": 6, "observation": {{"gamma": 0.2}},
            "cycles": 10, "run_seed": 3,
            "initial_truth": {{"state": [0.3, 0.3, 0.3]}},
            "initial_ensemble": {{"spread": 0.1, "exact_covariance": true}}
            {extra}
        }}"#
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn linear_constants_are_exact() {
        let r = ResolvedConstants::resolve(&cfg(r#", "rho": 1.0"#)).unwrap();
        assert_eq!(r.beta.source, Source::Exact);
        assert!((r.beta.value + 1.0).abs() < 1e-14);
        assert!((r.beta_lipschitz.value - 1.0).abs() < 1e-14);
        assert!((r.epsilon.value - 0.1).abs() < 1e-15);
        let l0 = r.lambda0.unwrap();
        assert_eq!(l0.source, Source::Derived);
        assert!((l0.value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn relative_alpha_uses_alpha0() {
        let r = ResolvedConstants::resolve(&cfg(r#", "rho": 1.0, "alpha": {"times_alpha0": 1.1}"#)).unwrap();
        assert!((r.alpha.value - 1.1 * r.alpha0.unwrap()).abs() < 1e-14);
        assert!(r.alpha.value > 1.0);
    }

    #[test]
    fn rho_is_estimated_when_absent() {
        let r = ResolvedConstants::resolve(&cfg("")).unwrap();
        assert_eq!(r.rho.source, Source::Estimated);
        let start = (3.0f64 * 0.09).sqrt();
        assert!((r.rho.value - RHO_MARGIN * start).abs() < 1e-12);
    }
}
