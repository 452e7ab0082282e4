//! Finite-dimensional model systems `du/dt = F(u)` and their discrete flow
//! over one assimilation interval, integrated with classical RK4.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{Ensemble, StateVector};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSystem {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { forcing: f64, dim: usize },
    /// `F(u) = A u`.
    Linear(DMatrix<f64>),
}

impl ModelSystem {
    /// `sigma = 10`, `rho = 28`, `beta = 8/3`.
    pub fn lorenz63() -> Self {
        ModelSystem::Lorenz63 { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }

    /// Forcing 8.
    pub fn lorenz96(dim: usize) -> Result<Self> {
        Self::lorenz96_with_forcing(dim, 8.0)
    }

    pub fn lorenz96_with_forcing(dim: usize, forcing: f64) -> Result<Self> {
        if dim < 4 {
            return Err(Error::InvalidParameter("Lorenz96 needs dim >= 4"));
        }
        Ok(ModelSystem::Lorenz96 { forcing, dim })
    }

    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), found: a.ncols() });
        }
        Ok(ModelSystem::Linear(a))
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSystem::Lorenz63 { .. } => 3,
            ModelSystem::Lorenz96 { dim, .. } => *dim,
            ModelSystem::Linear(a) => a.nrows(),
        }
    }

    fn rhs_unchecked(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ModelSystem::Lorenz63 { sigma, rho, beta } => {
                let (x, y, z) = (u[0], u[1], u[2]);
                DVector::from_vec(alloc::vec![sigma * (y - x), x * (rho - z) - y, x * y - beta * z])
            }
            ModelSystem::Lorenz96 { forcing, dim } => {
                let n = *dim;
                DVector::from_fn(n, |i, _| {
                    let ip1 = u[(i + 1) % n];
                    let im1 = u[(i + n - 1) % n];
                    let im2 = u[(i + n - 2) % n];
                    (ip1 - im2) * im1 - u[i] + forcing
                })
            }
            ModelSystem::Linear(a) => a * u,
        }
    }

    /// `F(u)`.
    pub fn rhs(&self, u: &StateVector) -> Result<StateVector> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: u.len() });
        }
        Ok(self.rhs_unchecked(u))
    }
}

/// Assimilation interval `h` split into `substeps` RK4 steps of size `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    h: f64,
    substeps: usize,
}

impl FlowConfig {
    /// `h / dt` must be a whole number (to 1e-9 relative).
    pub fn new(h: f64, dt: f64) -> Result<Self> {
        if !(h > 0.0) || !(dt > 0.0) || !h.is_finite() || !dt.is_finite() {
            return Err(Error::InvalidParameter("flow needs 0 < dt <= h"));
        }
        if dt > h * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter("flow needs dt <= h"));
        }
        let ratio = h / dt;
        let substeps = libm::round(ratio);
        if (ratio - substeps).abs() > 1e-9 * ratio {
            return Err(Error::InvalidParameter("h / dt must be an integer"));
        }
        Ok(FlowConfig { h, substeps: substeps as usize })
    }

    pub fn with_substeps(h: f64, substeps: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() || substeps == 0 {
            return Err(Error::InvalidParameter("flow needs h > 0 and at least one substep"));
        }
        Ok(FlowConfig { h, substeps })
    }

    /// `dt = h / 10`.
    pub fn default_for(h: f64) -> Result<Self> {
        Self::with_substeps(h, 10)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dt(&self) -> f64 {
        self.h / self.substeps as f64
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }
}

fn rk4_step(model: &ModelSystem, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = model.rhs_unchecked(u);
    let k2 = model.rhs_unchecked(&(u + &k1 * (0.5 * dt)));
    let k3 = model.rhs_unchecked(&(u + &k2 * (0.5 * dt)));
    let k4 = model.rhs_unchecked(&(u + &k3 * dt));
    u + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

/// `Psi_h(u0)`.
pub fn flow(model: &ModelSystem, cfg: &FlowConfig, u0: &StateVector) -> Result<StateVector> {
    if u0.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: u0.len() });
    }
    let dt = cfg.dt();
    let mut u = u0.clone();
    for _ in 0..cfg.substeps() {
        u = rk4_step(model, &u, dt);
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { member: None });
        }
    }
    Ok(u)
}

/// Memberwise flow; a failure is tagged with the member index.
pub fn predict_ensemble(model: &ModelSystem, cfg: &FlowConfig, ensemble: &Ensemble) -> Result<Ensemble> {
    let mut out = ensemble.as_matrix().clone();
    for (n, mut col) in out.column_iter_mut().enumerate() {
        let next = flow(model, cfg, &col.clone_owned()).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { member: Some(n) },
            other => other,
        })?;
        col.copy_from(&next);
    }
    Ensemble::from_columns(out)
}

fn sample_in_ball<R: rand::Rng>(rng: &mut R, dim: usize, radius: f64) -> DVector<f64> {
    loop {
        let z = DVector::from_fn(dim, |_, _| rng::standard_normal(rng));
        let norm = z.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let r = radius * libm::pow(u, 1.0 / dim as f64);
            return z * (r / norm);
        }
    }
}

fn sampled_max(model: &ModelSystem, rho: f64, n_samples: usize, seed: u64, ratio: impl Fn(&DVector<f64>, &DVector<f64>) -> Option<f64>) -> f64 {
    let mut rng = rng::stream_rng(seed, Purpose::Sampling, 0, 0);
    let m = model.dim();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let u = sample_in_ball(&mut rng, m, rho);
        let v = sample_in_ball(&mut rng, m, rho);
        if let Some(r) = ratio(&u, &v) {
            best = best.max(r);
        }
    }
    best
}

/// Exact `(one-sided, Lipschitz)` constants of a linear model: the largest
/// eigenvalue of `(A + A^T)/2` and the spectral norm of `A`. `None` for
/// nonlinear models.
pub fn linear_constants(model: &ModelSystem) -> Option<(f64, f64)> {
    let ModelSystem::Linear(a) = model else {
        return None;
    };
    let sym = (a + a.transpose()) * 0.5;
    let one_sided = crate::linalg::max_eigenvalue(&sym).ok()?;
    let lipschitz = a.clone().svd(false, false).singular_values.max();
    Some((one_sided, lipschitz))
}

/// Sampled lower bound on the one-sided Lipschitz constant
/// `max <F(u) - F(v), u - v> / |u - v|^2` over pairs drawn uniformly from `B(rho)`.
pub fn estimate_beta_one_sided(model: &ModelSystem, rho: f64, n_samples: usize, seed: u64) -> f64 {
    sampled_max(model, rho, n_samples.max(1), seed, |u, v| {
        let diff = u - v;
        let d2 = diff.norm_squared();
        (d2 > 0.0).then(|| (model.rhs_unchecked(u) - model.rhs_unchecked(v)).dot(&diff) / d2)
    })
}

/// Sampled lower bound on the Lipschitz constant `max |F(u) - F(v)| / |u - v|` over `B(rho)`.
pub fn estimate_beta_lipschitz(model: &ModelSystem, rho: f64, n_samples: usize, seed: u64) -> f64 {
    sampled_max(model, rho, n_samples.max(1), seed, |u, v| {
        let d = (u - v).norm();
        (d > 0.0).then(|| (model.rhs_unchecked(u) - model.rhs_unchecked(v)).norm() / d)
    })
}

/// Runs `steps` flow intervals from `u0` and returns the largest state norm
/// seen along the way together with the final state.
pub fn trajectory_radius(model: &ModelSystem, cfg: &FlowConfig, u0: &StateVector, steps: usize) -> Result<(f64, StateVector)> {
    let mut u = u0.clone();
    let mut radius = u.norm();
    for _ in 0..steps {
        u = flow(model, cfg, &u)?;
        radius = radius.max(u.norm());
    }
    Ok((radius, u))
}

/// States visited at each of `steps` intervals, starting after `u0`.
pub fn trajectory(model: &ModelSystem, cfg: &FlowConfig, u0: &StateVector, steps: usize) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(steps);
    let mut u = u0.clone();
    for _ in 0..steps {
        u = flow(model, cfg, &u)?;
        out.push(u.clone());
    }
    Ok(out)
}
