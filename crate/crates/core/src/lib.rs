//! Ensemble transform Kalman filter (ETKF) building blocks.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the ensemble
//! algebra, the ETKF analysis step in its covariance and transform forms,
//! multiplicative inflation, fixed-step model flows, seeded observation
//! noise, the closed-form filtering-error bounds, and a single-replicate
//! twin experiment driver. IO, Monte Carlo scheduling and the CLI live in
//! the `etkf-lab` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod bounds;
pub mod dynamics;
pub mod ensemble;
mod error;
pub mod identities;
pub mod linalg;
pub mod observation;
pub mod rng;
pub mod twin;

pub use analysis::{
    analysis_min_eigenvalue_map, analysis_step, analysis_step_covariance_form,
    analysis_step_transform_form, inflate, kalman_gain, mean_update, transform_matrix,
    AnalysisDiagnostics, AnalysisForm, AnalysisOutput, InflationFactor, TransformMatrix,
};
pub use ensemble::{Covariance, Ensemble, StateVector};
pub use error::{Error, Result};
pub use observation::{
    observe, sample_noise, NoiseCovariance, NoiseStream, ObservationModel, ObservationOperator,
    ObservationRecord,
};

pub use nalgebra::{DMatrix, DVector};
