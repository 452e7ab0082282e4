//! JSON run configuration.

use std::fs;
use std::path::Path;

use etkf_core::dynamics::{FlowConfig, ModelSystem};
use etkf_core::twin::{EnsembleInit, TruthInit, TwinConfig};
use etkf_core::{
    AnalysisForm, DMatrix, DVector, Ensemble, InflationFactor, NoiseCovariance, ObservationModel,
    ObservationOperator,
};
use serde::{Deserialize, Serialize};

use crate::resolve::ResolvedConstants;
use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Lorenz63 {
        #[serde(default = "l63_sigma")]
        sigma: f64,
        #[serde(default = "l63_rho")]
        rho: f64,
        #[serde(default = "l63_beta")]
        beta: f64,
    },
    Lorenz96 {
        dim: usize,
        #[serde(default = "l96_forcing")]
        forcing: f64,
    },
    /// `du/dt = A u` with `A` given row by row.
    Linear { matrix: Vec<Vec<f64>> },
    /// `du/dt = a u` in dimension `dim`.
    ScaledIdentity { a: f64, dim: usize },
}

fn l63_sigma() -> f64 {
    10.0
}
fn l63_rho() -> f64 {
    28.0
}
fn l63_beta() -> f64 {
    8.0 / 3.0
}
fn l96_forcing() -> f64 {
    8.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelSystem, LabError> {
        Ok(match self {
            ModelSpec::Lorenz63 { sigma, rho, beta } => ModelSystem::Lorenz63 { sigma: *sigma, rho: *rho, beta: *beta },
            ModelSpec::Lorenz96 { dim, forcing } => ModelSystem::lorenz96_with_forcing(*dim, *forcing)?,
            ModelSpec::Linear { matrix } => ModelSystem::linear(rows_to_matrix(matrix, "model.matrix")?)?,
            ModelSpec::ScaledIdentity { a, dim } => ModelSystem::linear(DMatrix::identity(*dim, *dim) * *a)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// Rows of `H`; identity when absent.
    #[serde(default)]
    pub operator: Option<Vec<Vec<f64>>>,
    /// `Gamma = gamma^2 I`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Full `Gamma`, rows.
    #[serde(default)]
    pub noise_covariance: Option<Vec<Vec<f64>>>,
}

impl ObservationSpec {
    pub fn build(&self, m: usize) -> Result<ObservationModel, LabError> {
        let operator = match &self.operator {
            None => ObservationOperator::identity(m),
            Some(rows) => ObservationOperator::matrix(rows_to_matrix(rows, "observation.operator")?)?,
        };
        let d = operator.output_dim();
        let noise = match (&self.gamma, &self.noise_covariance) {
            (Some(g), None) => NoiseCovariance::scaled_identity(*g, d)?,
            (None, Some(rows)) => NoiseCovariance::matrix(rows_to_matrix(rows, "observation.noise_covariance")?)?,
            _ => return Err(LabError::Config("observation needs exactly one of `gamma` or `noise_covariance`".into())),
        };
        Ok(ObservationModel::new(operator, noise)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub state: Vec<f64>,
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub spin_up_steps: usize,
    /// Integrator step of the spin-up; defaults to the cycle flow.
    #[serde(default)]
    pub spin_up_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default)]
    pub mean_offset: Option<Vec<f64>>,
    #[serde(default)]
    pub spread: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub exact_covariance: bool,
    /// Explicit members, one array per member.
    #[serde(default)]
    pub members: Option<Vec<Vec<f64>>>,
}

impl EnsembleSpec {
    pub fn build(&self) -> Result<EnsembleInit, LabError> {
        match (&self.members, self.spread) {
            (Some(members), None) => {
                if self.mean_offset.is_some() || self.seed.is_some() || self.exact_covariance {
                    return Err(LabError::Config("explicit members exclude mean_offset, seed and exact_covariance".into()));
                }
                let cols: Vec<DVector<f64>> = members.iter().map(|m| DVector::from_column_slice(m)).collect();
                Ok(EnsembleInit::Explicit(Ensemble::from_members(&cols)?))
            }
            (None, Some(spread)) => Ok(EnsembleInit::Gaussian {
                mean_offset: self.mean_offset.as_ref().map(|v| DVector::from_column_slice(v)),
                spread,
                seed: self.seed,
                exact_covariance: self.exact_covariance,
            }),
            _ => Err(LabError::Config("initial_ensemble needs exactly one of `spread` or `members`".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Relative(RelativeAlpha),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeAlpha {
    /// `alpha = times_alpha0 * alpha_0`.
    pub times_alpha0: f64,
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Value(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FormSpec {
    Covariance,
    #[default]
    Transform,
}

impl From<FormSpec> for AnalysisForm {
    fn from(f: FormSpec) -> Self {
        match f {
            FormSpec::Covariance => AnalysisForm::Covariance,
            FormSpec::Transform => AnalysisForm::Transform,
        }
    }
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Assimilation interval.
    pub h: f64,
    /// Integrator step; `h / 10` when both `dt` and `substeps` are absent.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub substeps: Option<usize>,
    pub n_members: usize,
    #[serde(default)]
    pub alpha: AlphaSpec,
    pub observation: ObservationSpec,
    /// Number of assimilation cycles `J`.
    pub cycles: usize,
    pub run_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub initial_truth: TruthSpec,
    pub initial_ensemble: EnsembleSpec,
    #[serde(default)]
    pub form: FormSpec,
    #[serde(default)]
    pub rho: Option<f64>,
    /// One-sided growth constant used by the well-posedness bound.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Lipschitz constant used by the inflation bounds.
    #[serde(default)]
    pub beta_lipschitz: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub lambda0: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), LabError> {
        if self.cycles < 1 {
            return Err(LabError::Config("cycles must be at least 1".into()));
        }
        if self.replicates < 1 {
            return Err(LabError::Config("replicates must be at least 1".into()));
        }
        Ok(())
    }

    pub fn flow(&self) -> Result<FlowConfig, LabError> {
        Ok(match (self.dt, self.substeps) {
            (Some(dt), None) => FlowConfig::new(self.h, dt)?,
            (None, Some(k)) => FlowConfig::with_substeps(self.h, k)?,
            (None, None) => FlowConfig::default_for(self.h)?,
            (Some(_), Some(_)) => return Err(LabError::Config("give at most one of `dt` and `substeps`".into())),
        })
    }

    /// Twin configuration with inflation `alpha` already resolved.
    pub fn twin_with_alpha(&self, alpha: f64) -> Result<TwinConfig, LabError> {
        self.check()?;
        let model = self.model.build()?;
        let m = model.dim();
        let cfg = TwinConfig {
            flow: self.flow()?,
            n_members: self.n_members,
            alpha: InflationFactor::new(alpha)?,
            observation: self.observation.build(m)?,
            cycles: self.cycles,
            run_seed: self.run_seed,
            truth: TruthInit {
                state: DVector::from_column_slice(&self.initial_truth.state),
                perturbation: self.initial_truth.perturbation,
                spin_up_steps: self.initial_truth.spin_up_steps,
                spin_up_dt: self.initial_truth.spin_up_dt,
            },
            ensemble: self.initial_ensemble.build()?,
            form: self.form.into(),
            rho: self.rho,
            model,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Twin configuration, resolving a relative `alpha` through the bound constants.
    pub fn twin(&self) -> Result<TwinConfig, LabError> {
        match self.alpha {
            AlphaSpec::Value(a) => self.twin_with_alpha(a),
            AlphaSpec::Relative(_) => {
                let resolved = ResolvedConstants::resolve(self)?;
                self.twin_with_alpha(resolved.alpha.value)
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, LabError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(LabError::Config(format!("{field} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"kind": "scaled_identity", "a": 0.5, "dim": 3},
        "h": 0.1,
        "n_members": 5,
        "observation": {"gamma": 0.3},
        "cycles": 20,
        "run_seed": 7,
        "initial_truth": {"state": [1.0, 0.0, -1.0]},
        "initial_ensemble": {"spread": 0.5}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.replicates, 1);
        assert_eq!(cfg.alpha, AlphaSpec::Value(1.0));
        assert_eq!(cfg.form, FormSpec::Transform);
        let twin = cfg.twin().unwrap();
        assert_eq!(twin.dim(), 3);
        assert_eq!(twin.flow.substeps(), 10);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = MINIMAL.replacen("\"h\": 0.1", "\"h\": 0.1, \"hh\": 2", 1);
        assert!(RunConfig::from_json(&bad).is_err());
        let bad_model = MINIMAL.replacen("\"dim\": 3}", "\"dim\": 3, \"x\": 1}", 1);
        assert!(RunConfig::from_json(&bad_model).is_err());
        let bad_alpha = MINIMAL.replacen("\"h\": 0.1", "\"h\": 0.1, \"alpha\": {\"times\": 2}", 1);
        assert!(RunConfig::from_json(&bad_alpha).is_err());
    }

    #[test]
    fn relative_alpha_parses() {
        let text = MINIMAL.replacen("\"h\": 0.1", "\"h\": 0.1, \"alpha\": {\"times_alpha0\": 1.1}", 1);
        let cfg = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg.alpha, AlphaSpec::Relative(RelativeAlpha { times_alpha0: 1.1 }));
    }

    #[test]
    fn rejects_zero_cycles_and_ambiguous_specs() {
        assert!(RunConfig::from_json(&MINIMAL.replacen("\"cycles\": 20", "\"cycles\": 0", 1)).is_err());
        let both = MINIMAL.replacen("{\"gamma\": 0.3}", "{\"gamma\": 0.3, \"noise_covariance\": [[1]]}", 1);
        assert!(RunConfig::from_json(&both).unwrap().twin().is_err());
        let neither = MINIMAL.replacen("{\"spread\": 0.5}", "{}", 1);
        assert!(RunConfig::from_json(&neither).unwrap().twin().is_err());
    }
}
